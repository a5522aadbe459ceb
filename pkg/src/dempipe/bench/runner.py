"""Run a configured scene to termination and write its report.

Outputs in ``output_dir``:

``steps.csv``
    one row per recorded step (every ``stats_every`` steps and the last):
    ``step, max_displacement, kinetic_energy`` followed by the fields of
    :meth:`StepStats.summary` (``candidates, contacts, max_contacts,
    max_candidates, divergence_ratio, sqrt_calls, norm_sqrt_calls,
    branch_path_count, wall_checks, wall_contacts``).
``summary.json``
    the :class:`RunReport` scalars plus the resolved configuration.
``snap_<step>.dems``
    binary snapshots every ``snapshot_every`` steps and at the end.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..contact import ContactHistory
from ..integrator import Simulation, SimulationExplosion, termination_check
from ..parallel import ParallelEngine
from ..state import ParticleSet
from .config import RunConfig, format_config
from .scenes import build_scene, two_body
from .snapshot import read_snapshot, write_snapshot

CSV_COLUMNS = (
    "step", "max_displacement", "kinetic_energy", "candidates", "contacts", "max_contacts",
    "max_candidates", "divergence_ratio", "sqrt_calls", "norm_sqrt_calls", "branch_path_count",
    "wall_checks", "wall_contacts",
)


@dataclass
class RunReport:
    particle_count: int
    total_steps: int
    wall_seconds: float
    termination: str
    momentum_drift: float
    worker_count: int
    model: str
    rows: list = field(default_factory=list)
    max_contacts: int = 0
    particles: ParticleSet | None = None
    history: ContactHistory | None = None
    step_index: int = 0

    @property
    def throughput(self) -> float:
        """Particle-steps per wall-clock second; 0 when nothing ran."""
        if self.total_steps == 0 or self.wall_seconds <= 0:
            return 0.0
        return self.particle_count * self.total_steps / self.wall_seconds

    def summary(self) -> dict:
        return {
            "particle_count": self.particle_count,
            "total_steps": self.total_steps,
            "wall_seconds": self.wall_seconds,
            "throughput": self.throughput,
            "termination": self.termination,
            "momentum_drift": self.momentum_drift,
            "max_contacts": self.max_contacts,
            "worker_count": self.worker_count,
            "model": self.model,
        }


def relative_drift(p0: np.ndarray, p1: np.ndarray, scale: float) -> float:
    """|p1 - p0| over |p0|, or over ``scale`` (sum of |m v|) when p0 vanishes."""
    diff = float(np.linalg.norm(p1 - p0))
    ref = float(np.linalg.norm(p0))
    if ref == 0.0:
        ref = scale
    return diff / ref if ref > 0 else diff


_warm = set()


def warm_up(model: str) -> None:
    """Compile (or load from cache) the kernels so timing excludes it."""
    if model in _warm:
        return
    sc = two_body(RunConfig(scene="two_body", model=model, k_sp=1.0))
    with Simulation(sc.particles, sc.config, sc.materials, sc.walls, workers=1) as sim:
        sim.step()
    _warm.add(model)


def _row(step: int, outcome, particles: ParticleSet) -> dict:
    row = {"step": step, "max_displacement": outcome.max_displacement,
           "kinetic_energy": particles.kinetic_energy()}
    row.update(outcome.stats.summary())
    return row


def run(cfg: RunConfig, workers: int | None = None, output_dir=None, engine: ParallelEngine | None = None,
        write: bool = True) -> RunReport:
    """Step ``cfg``'s scene until it settles or hits ``max_steps``."""
    workers = workers if workers is not None else cfg.workers
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    if cfg.particle_count == 0 and cfg.scene != "two_body":
        report = RunReport(0, 0, 0.0, "empty", 0.0, workers or 1, cfg.model)
        if write:
            _write(out, cfg, report)
        return report

    scene = build_scene(cfg)
    particles, history, step0 = scene.particles, None, 0
    if cfg.initial_snapshot:
        particles, history, step0 = read_snapshot(cfg.initial_snapshot)
    warm_up(cfg.model)

    if write:
        out.mkdir(parents=True, exist_ok=True)
    p0 = particles.momentum()
    scale = float(np.sum(particles.mass * np.linalg.norm(particles.velocity, axis=1)))
    rows: list[dict] = []
    max_contacts = 0
    termination = "max_steps"
    elapsed = 0.0
    sim = Simulation(particles, scene.config, scene.materials, scene.walls, history=history,
                     workers=workers, step_index=step0, engine=engine)
    try:
        taken = 0
        if cfg.max_steps == 0:
            termination = "max_steps"
        while taken < cfg.max_steps:
            t0 = time.perf_counter()
            try:
                outcome = sim.step()
            except SimulationExplosion:
                termination = "explosion"
                report = RunReport(sim.particles.count, taken, elapsed, termination, math.nan,
                                   sim.engine.worker_count, cfg.model, rows, max_contacts,
                                   sim.particles, sim.history, sim.step_index)
                if write:
                    _write(out, cfg, report)
                raise
            elapsed += time.perf_counter() - t0
            taken += 1
            max_contacts = max(max_contacts, outcome.stats.max_contacts)
            settled = taken > cfg.min_steps and outcome.max_displacement < scene.config.termination_eps
            last = settled or taken >= cfg.max_steps
            if taken % cfg.stats_every == 0 or last:
                rows.append(_row(outcome.step_index, outcome, sim.particles))
            if write and cfg.snapshot_every and taken % cfg.snapshot_every == 0:
                write_snapshot(out / f"snap_{outcome.step_index:08d}.dems", sim.particles, sim.history,
                               sim.step_index)
            if settled:
                termination = "settled"
                break
        drift = relative_drift(p0, sim.particles.momentum(), scale)
        report = RunReport(sim.particles.count, taken, elapsed, termination, drift, sim.engine.worker_count,
                           cfg.model, rows, max_contacts, sim.particles, sim.history, sim.step_index)
    finally:
        sim.close()
    if write:
        _write(out, cfg, report)
    return report


def _write(out: Path, cfg: RunConfig, report: RunReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "steps.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        w.writerows(report.rows)
    summary = report.summary()
    summary["config"] = format_config(cfg)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, allow_nan=True) + "\n")
    if report.particles is not None:
        write_snapshot(out / f"snap_{report.step_index:08d}.dems", report.particles, report.history,
                       report.step_index)


@dataclass
class Comparison:
    simple: RunReport
    practical: RunReport

    @property
    def ratio(self) -> float | None:
        """Simple over practical throughput; None when either did no work."""
        if self.simple.throughput == 0 or self.practical.throughput == 0:
            return None
        return self.simple.throughput / self.practical.throughput

    def summary(self) -> dict:
        return {
            "simple": self.simple.summary(),
            "practical": self.practical.summary(),
            "ratio_simple_over_practical": self.ratio if self.ratio is not None else "n/a",
        }


def compare_models(cfg: RunConfig, workers: int | None = None, output_dir=None, write: bool = True) -> Comparison:
    """Run the same scene under both contact models."""
    base = Path(output_dir if output_dir is not None else cfg.output_dir)
    reports = {}
    for model in ("simple", "practical"):
        reports[model] = run(cfg.replace(model=model), workers, base / model, write=write)
    cmp = Comparison(reports["simple"], reports["practical"])
    if write:
        base.mkdir(parents=True, exist_ok=True)
        (base / "comparison.json").write_text(json.dumps(cmp.summary(), indent=2) + "\n")
    return cmp
