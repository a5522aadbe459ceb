"""One DEM time step.

The step runs as barrier-separated phases:

1. cell map, stable sort and reorder into cell order (serial);
2. per-particle force phase: each particle gathers the 27-cell block,
   accumulates pair forces in ascending sorted index, then wall forces
   (parallel, reads ``prev``, writes its own rows of ``next``);
3. history merge and stats (serial);
4. semi-implicit Euler update into ``next`` (parallel);
5. buffer swap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .contact import ContactHistory, TangentialHistory, practical_core, simple_core, wall_contact_core
from .grid import GridMaps, sort_particles
from .parallel import IndexedFailure, ParallelEngine, PhaseError
from .profiler import PATH_CONTACT, PATH_CONTACT_CAPPED, PATH_NO_CONTACT, StepStats, record_step
from .state import MaterialTable, ParticleSet, SimConfig, Wall, pack_walls, swap_buffers

MODEL_CODES = {"simple": 0, "practical": 1}

ERR_NONE = 0
ERR_COINCIDENT = 1
ERR_TUNNELED = 2
ERR_NONFINITE = 3
ERR_SCRATCH = 4

_ERR_TEXT = {
    ERR_COINCIDENT: "coincident particle centres",
    ERR_TUNNELED: "particle tunnelled through a wall",
    ERR_NONFINITE: "non-finite force or state",
    ERR_SCRATCH: "history scratch overflow",
}


class SimulationExplosion(RuntimeError):
    """Numerical failure during a step; carries the particle id and step index."""

    def __init__(self, message: str, particle_id: int | None = None, step: int | None = None):
        super().__init__(message)
        self.particle_id = particle_id
        self.step = step


@dataclass
class StepOutcome:
    max_displacement: float
    step_index: int
    stats: StepStats = field(default_factory=StepStats)


@numba.njit(cache=True, inline="always")
def _lookup(keys, vals, rows, owner, key):
    # keys are sorted, so all entries owned by one particle id are contiguous
    for i in range(rows[owner], rows[owner + 1]):
        if keys[i] == key:
            return vals[i, 0], vals[i, 1], vals[i, 2]
    return 0.0, 0.0, 0.0


def history_rows(keys: np.ndarray, n_ids: int, stride: int) -> np.ndarray:
    """Offsets so that entries owned by id ``p`` are ``keys[rows[p]:rows[p + 1]]``."""
    return np.searchsorted(keys, np.arange(n_ids + 1, dtype=np.int64) * stride)


@numba.njit(nogil=True, cache=True)
def _force_range(start, stop, pos, vel, omg, rad, mass, mat, pid, scm, cell_start, cell_end, dims,
                 w_pt, w_nrm, w_lo, w_hi, w_mat, w_two, c_t, c_n, alpha, mu,
                 model, k_sp, k_da, k_sh, slip_rescale, dt, n_ids,
                 h_keys, h_vals, h_rows, wh_keys, wh_vals, wh_rows,
                 force, torque, cand, cont,
                 out_hk, out_hv, out_whk, out_whv):
    nx = dims[0]
    ny = dims[1]
    nz = dims[2]
    n_walls = w_pt.shape[0]
    nh = 0
    nwh = 0
    coeff_sqrt = 0
    norm_sqrt = 0
    paths = 0
    wall_checks = 0
    wall_contacts = 0
    practical = model == 1
    for i in range(start, stop):
        c = scm[i]
        ci = c % nx
        cj = (c // nx) % ny
        ck = c // (nx * ny)
        xi = pos[i, 0]
        yi = pos[i, 1]
        zi = pos[i, 2]
        ri = rad[i]
        mi = mass[i]
        fx = 0.0
        fy = 0.0
        fz = 0.0
        tx = 0.0
        ty = 0.0
        tz = 0.0
        n_cand = 0
        n_cont = 0
        for kk in range(max(ck - 1, 0), min(ck + 2, nz)):
            for jj in range(max(cj - 1, 0), min(cj + 2, ny)):
                for ii in range(max(ci - 1, 0), min(ci + 2, nx)):
                    cell = ii + nx * (jj + ny * kk)
                    for s in range(cell_start[cell], cell_end[cell]):
                        if s == i:
                            continue
                        n_cand += 1
                        dx = pos[s, 0] - xi
                        dy = pos[s, 1] - yi
                        dz = pos[s, 2] - zi
                        d2 = dx * dx + dy * dy + dz * dz
                        rs = ri + rad[s]
                        if d2 >= rs * rs:
                            paths |= PATH_NO_CONTACT
                            continue
                        if d2 == 0.0:
                            return nh, nwh, coeff_sqrt, norm_sqrt, paths, wall_checks, wall_contacts, 1, i
                        dist = math.sqrt(d2)
                        norm_sqrt += 1
                        overlap = rs - dist
                        if not overlap > 0.0:
                            paths |= PATH_NO_CONTACT
                            continue
                        n_cont += 1
                        nxv = dx / dist
                        nyv = dy / dist
                        nzv = dz / dist
                        if practical:
                            a = mat[i]
                            b = mat[s]
                            key = min(pid[i], pid[s]) * n_ids + max(pid[i], pid[s])
                            ox, oy, oz = _lookup(h_keys, h_vals, h_rows, min(pid[i], pid[s]), key)
                            if pid[i] > pid[s]:
                                ox = -ox
                                oy = -oy
                                oz = -oz
                            r_s = rad[s]
                            out = practical_core(
                                nxv, nyv, nzv, overlap,
                                vel[i, 0] - vel[s, 0], vel[i, 1] - vel[s, 1], vel[i, 2] - vel[s, 2],
                                ri * omg[i, 0] + r_s * omg[s, 0],
                                ri * omg[i, 1] + r_s * omg[s, 1],
                                ri * omg[i, 2] + r_s * omg[s, 2],
                                ri, 1.0 / ri + 1.0 / r_s, 1.0 / mi + 1.0 / mass[s],
                                c_t[a, b], c_n[a, b], alpha[a, b], mu[a, b],
                                ox, oy, oz, dt, slip_rescale)
                            coeff_sqrt += 2
                            norm_sqrt += 2
                            paths |= PATH_CONTACT_CAPPED if out[9] else PATH_CONTACT
                            fx += out[0]
                            fy += out[1]
                            fz += out[2]
                            tx += out[3]
                            ty += out[4]
                            tz += out[5]
                            if pid[i] < pid[s]:
                                if nh >= out_hk.shape[0]:
                                    return nh, nwh, coeff_sqrt, norm_sqrt, paths, wall_checks, wall_contacts, 4, i
                                out_hk[nh] = key
                                out_hv[nh, 0] = out[6]
                                out_hv[nh, 1] = out[7]
                                out_hv[nh, 2] = out[8]
                                nh += 1
                        else:
                            out3 = simple_core(
                                nxv, nyv, nzv, overlap,
                                vel[s, 0] - vel[i, 0], vel[s, 1] - vel[i, 1], vel[s, 2] - vel[i, 2],
                                k_sp, k_da, k_sh)
                            paths |= PATH_CONTACT
                            fx += out3[0]
                            fy += out3[1]
                            fz += out3[2]
        for w in range(n_walls):
            wall_checks += 1
            g = wall_contact_core(xi, yi, zi, ri, w_pt[w, 0], w_pt[w, 1], w_pt[w, 2],
                                  w_nrm[w, 0], w_nrm[w, 1], w_nrm[w, 2],
                                  w_lo[w, 0], w_lo[w, 1], w_lo[w, 2], w_hi[w, 0], w_hi[w, 1], w_hi[w, 2],
                                  w_two[w])
            if g[4]:
                return nh, nwh, coeff_sqrt, norm_sqrt, paths, wall_checks, wall_contacts, 2, i
            overlap = g[3]
            if not overlap > 0.0:
                continue
            wall_contacts += 1
            nxv = g[0]
            nyv = g[1]
            nzv = g[2]
            if practical:
                a = mat[i]
                b = w_mat[w]
                key = pid[i] * n_walls + w
                ox, oy, oz = _lookup(wh_keys, wh_vals, wh_rows, pid[i], key)
                out = practical_core(
                    nxv, nyv, nzv, overlap, vel[i, 0], vel[i, 1], vel[i, 2],
                    ri * omg[i, 0], ri * omg[i, 1], ri * omg[i, 2],
                    ri, 1.0 / ri, 1.0 / mi,
                    c_t[a, b], c_n[a, b], alpha[a, b], mu[a, b],
                    ox, oy, oz, dt, slip_rescale)
                coeff_sqrt += 2
                norm_sqrt += 2
                fx += out[0]
                fy += out[1]
                fz += out[2]
                tx += out[3]
                ty += out[4]
                tz += out[5]
                if nwh >= out_whk.shape[0]:
                    return nh, nwh, coeff_sqrt, norm_sqrt, paths, wall_checks, wall_contacts, 4, i
                out_whk[nwh] = key
                out_whv[nwh, 0] = out[6]
                out_whv[nwh, 1] = out[7]
                out_whv[nwh, 2] = out[8]
                nwh += 1
            else:
                out3 = simple_core(nxv, nyv, nzv, overlap, -vel[i, 0], -vel[i, 1], -vel[i, 2],
                                   k_sp, k_da, k_sh)
                fx += out3[0]
                fy += out3[1]
                fz += out3[2]
        if not (math.isfinite(fx) and math.isfinite(fy) and math.isfinite(fz)
                and math.isfinite(tx) and math.isfinite(ty) and math.isfinite(tz)):
            return nh, nwh, coeff_sqrt, norm_sqrt, paths, wall_checks, wall_contacts, 3, i
        force[i, 0] = fx
        force[i, 1] = fy
        force[i, 2] = fz
        torque[i, 0] = tx
        torque[i, 1] = ty
        torque[i, 2] = tz
        cand[i] = n_cand
        cont[i] = n_cont
    return nh, nwh, coeff_sqrt, norm_sqrt, paths, wall_checks, wall_contacts, 0, -1


@numba.njit(nogil=True, cache=True)
def _integrate_range(start, stop, pos, vel, omg, rad, mass, force, torque, gx, gy, gz, dt,
                     npos, nvel, nomg, disp):
    for i in range(start, stop):
        inv_m = 1.0 / mass[i]
        vx = vel[i, 0] + (force[i, 0] * inv_m + gx) * dt
        vy = vel[i, 1] + (force[i, 1] * inv_m + gy) * dt
        vz = vel[i, 2] + (force[i, 2] * inv_m + gz) * dt
        x = pos[i, 0] + vx * dt
        y = pos[i, 1] + vy * dt
        z = pos[i, 2] + vz * dt
        inv_i = 1.0 / (0.4 * mass[i] * rad[i] * rad[i])
        wx = omg[i, 0] + torque[i, 0] * inv_i * dt
        wy = omg[i, 1] + torque[i, 1] * inv_i * dt
        wz = omg[i, 2] + torque[i, 2] * inv_i * dt
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)
                and math.isfinite(wx) and math.isfinite(wy) and math.isfinite(wz)):
            return i
        nvel[i, 0] = vx
        nvel[i, 1] = vy
        nvel[i, 2] = vz
        npos[i, 0] = x
        npos[i, 1] = y
        npos[i, 2] = z
        nomg[i, 0] = wx
        nomg[i, 1] = wy
        nomg[i, 2] = wz
        ddx = x - pos[i, 0]
        ddy = y - pos[i, 1]
        ddz = z - pos[i, 2]
        disp[i] = math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
    return -1


def integrate_particle(x, v, w, m, r, F_total, T_total, dt, g):
    """Semi-implicit Euler for one solid sphere; returns (x', v', w')."""
    v_new = np.asarray(v, dtype=np.float64) + (np.asarray(F_total) / m + np.asarray(g)) * dt
    x_new = np.asarray(x, dtype=np.float64) + v_new * dt
    inertia = 0.4 * m * r * r
    w_new = np.asarray(w, dtype=np.float64) + np.asarray(T_total) / inertia * dt
    return x_new, v_new, w_new


def termination_check(outcome: StepOutcome, config: SimConfig) -> bool:
    return outcome.max_displacement < config.termination_eps or outcome.step_index >= config.max_steps


class ForcePhase:
    """Everything the force kernel reads in one step, bound to the sorted particles."""

    def __init__(self, particles: ParticleSet, maps: GridMaps, walls, materials: MaterialTable,
                 history: ContactHistory, config: SimConfig):
        self.p = particles
        self.maps = maps
        self.walls = walls
        self.materials = materials
        self.history = history
        self.config = config
        n = particles.count
        self.n_ids = int(particles.ids.max()) + 1 if n else 1
        self.cand = np.zeros(n, dtype=np.int64)
        self.cont = np.zeros(n, dtype=np.int64)
        self.block = 27 * max(maps.max_occupancy, 1)
        if materials.n_materials <= max(int(particles.material.max(initial=0)), int(walls.material.max(initial=0))):
            raise ValueError("material id outside the material table")

    def __call__(self, start: int, stop: int):
        p, cfg, mt = self.p, self.config, self.materials
        m = stop - start
        out_hk = np.empty(m * self.block, dtype=np.int64)
        out_hv = np.empty((m * self.block, 3))
        n_w = self.walls.point.shape[0]
        out_whk = np.empty(m * n_w, dtype=np.int64)
        out_whv = np.empty((m * n_w, 3))
        hp, hw = self.history.pairs, self.history.walls
        res = _force_range(
            start, stop, p.prev.position, p.prev.velocity, p.prev.angular_velocity, p.radius, p.mass,
            p.material, p.ids, self.maps.SCM, self.maps.cell_start, self.maps.cell_end, self.maps.dims,
            self.walls.point, self.walls.normal, self.walls.lo, self.walls.hi, self.walls.material,
            self.walls.two_sided,
            mt.spring_tangential, mt.spring_normal, mt.restitution, mt.friction,
            MODEL_CODES[cfg.model], cfg.k_sp, cfg.k_da, cfg.k_sh, cfg.slip_rescale, cfg.dt, self.n_ids,
            hp.keys, hp.values, history_rows(hp.keys, self.n_ids, self.n_ids),
            hw.keys, hw.values, history_rows(hw.keys, self.n_ids, max(n_w, 1)),
            p.next.force, p.next.torque, self.cand, self.cont,
            out_hk, out_hv, out_whk, out_whv,
        )
        nh, nwh, coeff, norms, paths, wchk, wcont, err, idx = res
        if err != ERR_NONE:
            raise IndexedFailure(_ERR_TEXT[err], int(idx))
        return (out_hk[:nh], out_hv[:nh], out_whk[:nwh], out_whv[:nwh],
                (coeff, norms, paths, wchk, wcont))


class IntegratePhase:
    def __init__(self, particles: ParticleSet, config: SimConfig):
        self.p = particles
        self.config = config
        self.disp = np.zeros(particles.count)

    def __call__(self, start: int, stop: int):
        p, cfg = self.p, self.config
        g = cfg.gravity
        bad = _integrate_range(
            start, stop, p.prev.position, p.prev.velocity, p.prev.angular_velocity, p.radius, p.mass,
            p.next.force, p.next.torque, g[0], g[1], g[2], cfg.dt,
            p.next.position, p.next.velocity, p.next.angular_velocity, self.disp,
        )
        if bad >= 0:
            raise IndexedFailure("non-finite position or angular velocity", int(bad))
        p.written[start:stop] = True
        return None


def merge_history(scratch) -> ContactHistory:
    """Single-threaded merge of per-worker history output, in worker order."""
    if not scratch:
        return ContactHistory.empty()
    pk = np.concatenate([s[0] for s in scratch])
    pv = np.concatenate([s[1] for s in scratch]).reshape(-1, 3)
    wk = np.concatenate([s[2] for s in scratch])
    wv = np.concatenate([s[3] for s in scratch]).reshape(-1, 3)
    return ContactHistory(TangentialHistory(pk, pv), TangentialHistory(wk, wv))


def _explode(particles: ParticleSet, exc: PhaseError, step_index: int, phase: str):
    pid = int(particles.ids[exc.index]) if exc.index is not None else None
    raise SimulationExplosion(
        f"step {step_index}, {phase} phase, particle id {pid}: {exc}", particle_id=pid, step=step_index
    ) from exc


def compute_forces(
    particles: ParticleSet,
    walls,
    materials: MaterialTable,
    history: ContactHistory,
    config: SimConfig,
    engine: ParallelEngine,
    step_index: int = 0,
):
    """Sort into cell order and accumulate contact forces into the next buffer.

    Returns (sorted particles, grid maps, new history, StepStats); gravity is
    not included.  ``step_index`` is the 1-based step used in error messages.
    """
    packed = walls if hasattr(walls, "normal") else pack_walls(list(walls))
    try:
        particles, maps = sort_particles(particles, config)
    except ValueError as exc:
        raise SimulationExplosion(f"step {step_index}: {exc}", step=step_index) from exc
    particles.next.force.fill(0.0)
    particles.next.torque.fill(0.0)
    forces = ForcePhase(particles, maps, packed, materials, history, config)
    try:
        scratch = engine.parallel_for(particles.count, forces)
    except PhaseError as exc:
        _explode(particles, exc, step_index, "force")
    stats = record_step(forces.cand, forces.cont, [s[4] for s in scratch])
    return particles, maps, merge_history(scratch), stats


def step(
    particles: ParticleSet,
    walls,
    materials: MaterialTable,
    history: ContactHistory,
    config: SimConfig,
    engine: ParallelEngine,
    step_index: int = 0,
):
    """Advance one step.  Returns (particles', history', StepOutcome).

    ``particles'`` is in sorted cell order with the new state in ``prev``;
    ``step_index`` is the 1-based index of the step just taken.
    """
    if particles.count == 0:
        return particles, ContactHistory.empty(), StepOutcome(0.0, step_index + 1, StepStats())
    particles, _, new_history, stats = compute_forces(
        particles, walls, materials, history, config, engine, step_index + 1
    )
    integ = IntegratePhase(particles, config)
    try:
        engine.parallel_for(particles.count, integ)
    except PhaseError as exc:
        _explode(particles, exc, step_index + 1, "integrate")
    swap_buffers(particles)
    return particles, new_history, StepOutcome(float(integ.disp.max()), step_index + 1, stats)


class Simulation:
    """Mutable run state: particles, walls, history and the worker pool."""

    def __init__(
        self,
        particles: ParticleSet,
        config: SimConfig,
        materials: MaterialTable,
        walls: Sequence[Wall] = (),
        history: ContactHistory | None = None,
        workers: int | None = None,
        step_index: int = 0,
        engine: ParallelEngine | None = None,
    ):
        self.particles = particles
        self.config = config
        self.materials = materials
        self.walls = list(walls)
        self.packed_walls = pack_walls(self.walls)
        self.history = history if history is not None else ContactHistory.empty()
        self._own_engine = engine is None
        self.engine = engine if engine is not None else ParallelEngine(workers)
        self.step_index = step_index

    def step(self) -> StepOutcome:
        self.particles, self.history, outcome = step(
            self.particles, self.packed_walls, self.materials, self.history, self.config,
            self.engine, self.step_index,
        )
        self.step_index = outcome.step_index
        return outcome

    def close(self) -> None:
        if self._own_engine:
            self.engine.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
