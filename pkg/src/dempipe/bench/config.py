"""Flat ``key = value`` run configuration.

One assignment per line, ``#`` starts a comment, vectors are comma separated
triples.  Unknown keys are rejected.  Scene geometry (``slit_width``,
``box_elevation``, ``lattice_spacing``, ``jitter``) is measured in particle
diameters; everything else is SI.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

SCENES = ("box_slit", "random_gas", "two_body", "stack")
FULL_PARTICLE_COUNT = 2**17


class ConfigError(ValueError):
    pass


Vec3 = tuple  # (float, float, float)


@dataclass
class RunConfig:
    scene: str = "box_slit"
    particle_count: int = 4096
    seed: int = 0
    output_dir: str = "runs/default"
    snapshot_every: int = 0
    stats_every: int = 1
    model: str = "practical"
    workers: Optional[int] = None
    initial_snapshot: Optional[str] = None

    dt: float = 5e-5
    gravity: Vec3 = (0.0, 0.0, -9.81)
    domain_min: Optional[Vec3] = None
    domain_max: Optional[Vec3] = None
    cell_edge: Optional[float] = None
    termination_eps: float = 1e-8
    max_steps: int = 200_000
    # the settle test is skipped before this step (a scene released from rest
    # moves less than termination_eps on its first steps)
    min_steps: int = 0

    k_sp: float = 0.0
    k_da: float = 0.0
    k_sh: float = 0.0

    spring_tangential: float = 4.0e6
    spring_normal: float = 5.0e6
    restitution: float = 0.6
    friction: float = 0.5
    slip_rescale: bool = False

    radius: float = 0.005
    density: float = 2500.0
    slit_width: float = 4.0
    box_elevation: float = 6.0
    lattice_spacing: float = 1.1
    jitter: float = 0.04
    approach_speed: float = 1.0
    gas_fraction: float = 0.1
    gas_speed: float = 0.1
    walls: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scene not in SCENES:
            raise ConfigError(f"scene must be one of {SCENES}, got {self.scene!r}")
        if self.model not in ("simple", "practical"):
            raise ConfigError(f"model must be simple or practical, got {self.model!r}")
        if self.particle_count < 0:
            raise ConfigError("particle_count must be non-negative")
        for name in ("dt", "radius", "density", "lattice_spacing"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("termination_eps", "spring_tangential", "spring_normal", "restitution", "friction",
                     "k_sp", "jitter", "gas_speed", "slit_width", "box_elevation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.max_steps < 0 or self.min_steps < 0 or self.snapshot_every < 0 or self.stats_every < 1:
            raise ConfigError("max_steps/min_steps/snapshot_every must be >= 0 and stats_every >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 < self.gas_fraction < 0.5:
            raise ConfigError("gas_fraction must lie in (0, 0.5)")
        if (self.domain_min is None) != (self.domain_max is None):
            raise ConfigError("give both domain_min and domain_max or neither")

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    kind = _FIELDS[name].type
    text = raw.strip()
    optional = kind.startswith("Optional")
    if optional and text.lower() in ("", "none", "auto"):
        return None
    base = kind[len("Optional["):-1] if optional else kind
    try:
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if base == "Vec3":
            parts = [float(p) for p in text.split(",")]
            if len(parts) != 3:
                raise ValueError(text)
            return tuple(parts)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r} (expected {base})") from None


def parse_config(text: str, **overrides) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(), **overrides)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            text = "none"
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, tuple):
            text = ", ".join(repr(float(x)) for x in v)
        else:
            text = repr(v) if isinstance(v, float) else str(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
