"""Initial conditions for the benchmark scenes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..state import MaterialTable, ParticleSet, SimConfig, Wall
from .config import ConfigError, RunConfig


@dataclass
class Scene:
    particles: ParticleSet
    walls: list
    materials: MaterialTable
    config: SimConfig
    info: dict = field(default_factory=dict)


def materials_from(cfg: RunConfig) -> MaterialTable:
    return MaterialTable.uniform(cfg.spring_tangential, cfg.spring_normal, cfg.restitution, cfg.friction)


def sphere_mass(cfg: RunConfig) -> float:
    return cfg.density * 4.0 / 3.0 * math.pi * cfg.radius**3


def sim_config(cfg: RunConfig, domain_min, domain_max) -> SimConfig:
    if cfg.domain_min is not None:
        domain_min, domain_max = cfg.domain_min, cfg.domain_max
    edge = cfg.cell_edge if cfg.cell_edge is not None else cfg.diameter
    return SimConfig(
        dt=cfg.dt,
        domain_min=domain_min,
        domain_max=domain_max,
        cell_edge=edge,
        gravity=cfg.gravity,
        termination_eps=cfg.termination_eps,
        max_steps=cfg.max_steps,
        model=cfg.model,
        k_sp=cfg.k_sp,
        k_da=cfg.k_da,
        k_sh=cfg.k_sh,
        slip_rescale=cfg.slip_rescale,
    )


def box_walls(lo, hi) -> list[Wall]:
    """Six inward-facing planes enclosing [lo, hi]."""
    walls = []
    for axis in range(3):
        n = np.zeros(3)
        n[axis] = 1.0
        walls.append(Wall(np.asarray(lo, dtype=float), n))
        walls.append(Wall(np.asarray(hi, dtype=float), -n))
    return walls


def _particles(cfg: RunConfig, pos, vel=None) -> ParticleSet:
    return ParticleSet(pos, radius=cfg.radius, mass=sphere_mass(cfg), velocity=vel)


def two_body(cfg: RunConfig) -> Scene:
    r, d = cfg.radius, cfg.diameter
    gap = 0.5 * d
    pos = np.array([[-(r + gap / 2), 0.0, 0.0], [r + gap / 2, 0.0, 0.0]])
    vel = np.array([[cfg.approach_speed, 0.0, 0.0], [0.0, 0.0, 0.0]])
    half = 4.0 * d
    sc = sim_config(cfg, (-half, -half, -half), (half, half, half))
    return Scene(_particles(cfg, pos, vel), [], materials_from(cfg), sc)


def random_gas(cfg: RunConfig) -> Scene:
    rng = np.random.default_rng(cfg.seed)
    n, d = cfg.particle_count, cfg.diameter
    side = (n * math.pi / 6.0 * d**3 / cfg.gas_fraction) ** (1.0 / 3.0)
    side = max(side, 3.0 * d)
    spacing = d * (1.0 + 2.0 * cfg.jitter + 0.01)
    per_axis = max(int(math.floor((side - d) / spacing)) + 1, 1)
    sites = per_axis**3
    if n > sites:
        raise ConfigError(f"cannot place {n} particles on {sites} lattice sites")
    chosen = rng.choice(sites, size=n, replace=False) if n else np.zeros(0, dtype=np.int64)
    ijk = np.stack(np.unravel_index(np.sort(chosen), (per_axis,) * 3), axis=1).astype(float)
    pos = cfg.radius + ijk * spacing + rng.uniform(-cfg.jitter, cfg.jitter, (n, 3)) * d
    vel = rng.normal(0.0, cfg.gas_speed, (n, 3))
    hi = max(side, per_axis * spacing + cfg.radius)
    sc = sim_config(cfg, (0.0, 0.0, 0.0), (hi, hi, hi))
    walls = box_walls(sc.domain_min, sc.domain_max) if cfg.walls else []
    return Scene(_particles(cfg, pos, vel), walls, materials_from(cfg), sc)


def stack(cfg: RunConfig) -> Scene:
    n, r, d = cfg.particle_count, cfg.radius, cfg.diameter
    gap = 0.05 * d
    z = r + np.arange(n) * (d + gap)
    pos = np.stack([np.zeros(n), np.zeros(n), z], axis=1)
    half = 2.0 * d
    top = (z[-1] if n else 0.0) + 2.0 * d
    sc = sim_config(cfg, (-half, -half, 0.0), (half, half, max(top, 3.0 * d)))
    walls = [Wall((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))]
    if cfg.walls:
        walls += box_walls(sc.domain_min, sc.domain_max)[:4]
    return Scene(_particles(cfg, pos), walls, materials_from(cfg), sc)


def box_slit_geometry(cfg: RunConfig) -> dict:
    """Box footprint, fill height and domain for ``particle_count`` particles.

    The box holds a jittered lattice about twice as wide as it is tall; the
    slotted floor sits ``box_elevation`` diameters above the ground and the
    slot runs the full box length along y.  The outer walls stand two
    diameters outside the box so the discharged grains form a confined bed
    (with no rolling resistance, a lone sphere on an open floor never stops).
    """
    n, d = cfg.particle_count, cfg.diameter
    if cfg.slit_width <= 1.0:
        raise ConfigError("slit width must exceed one particle diameter")
    if cfg.lattice_spacing < 1.0 + 2.0 * cfg.jitter:
        raise ConfigError("lattice spacing too small for the jitter: initial overlaps possible")
    side = max(int(math.ceil((2.0 * n) ** (1.0 / 3.0))), 3)
    layers = max(int(math.ceil(n / side**2)), 1)
    s = cfg.lattice_spacing * d
    width = side * s
    elevation = cfg.box_elevation * d
    fill_top = elevation + layers * s
    box_top = fill_top + 2.0 * d
    half_x = 0.5 * width + 2.0 * d
    return {
        "side": side,
        "layers": layers,
        "spacing": s,
        "width": width,
        "elevation": elevation,
        "slit": cfg.slit_width * d,
        "box_top": box_top,
        "domain_min": (-half_x, -0.5 * width, 0.0),
        "domain_max": (half_x, 0.5 * width, box_top + 2.0 * d),
    }


def box_slit(cfg: RunConfig) -> Scene:
    rng = np.random.default_rng(cfg.seed)
    geo = box_slit_geometry(cfg)
    n, r, d = cfg.particle_count, cfg.radius, cfg.diameter
    side, s, half_w = geo["side"], geo["spacing"], 0.5 * geo["width"]
    elev, half_slit = geo["elevation"], 0.5 * geo["slit"]
    if 2 * half_slit >= geo["width"] - 2.0 * d:
        raise ConfigError("slit is wider than the box floor")
    capacity = side * side * geo["layers"]
    if n > capacity:
        raise ConfigError(f"box holds {capacity} particles, asked for {n}")

    idx = np.arange(n)
    ix, iy, iz = idx % side, (idx // side) % side, idx // (side * side)
    base = np.stack([-half_w + (ix + 0.5) * s, -half_w + (iy + 0.5) * s, elev + (iz + 0.5) * s], axis=1)
    pos = base + rng.uniform(-cfg.jitter, cfg.jitter, (n, 3)) * d
    particles = _particles(cfg, pos)

    sc = sim_config(cfg, geo["domain_min"], geo["domain_max"])
    lo, hi = sc.domain_min, sc.domain_max
    inf = math.inf
    top = geo["box_top"]
    walls = [
        Wall((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)),  # ground
        Wall((lo[0], 0.0, 0.0), (1.0, 0.0, 0.0)),
        Wall((hi[0], 0.0, 0.0), (-1.0, 0.0, 0.0)),
        Wall((0.0, lo[1], 0.0), (0.0, 1.0, 0.0)),
        Wall((0.0, hi[1], 0.0), (0.0, -1.0, 0.0)),
        # box sides and the slotted floor are thin plates with real edges
        Wall((-half_w, 0.0, 0.0), (1.0, 0.0, 0.0), patch_min=(-inf, -inf, elev), patch_max=(inf, inf, top),
             two_sided=True),
        Wall((half_w, 0.0, 0.0), (-1.0, 0.0, 0.0), patch_min=(-inf, -inf, elev), patch_max=(inf, inf, top),
             two_sided=True),
        Wall((0.0, 0.0, elev), (0.0, 0.0, 1.0), patch_min=(-half_w, -inf, -inf), patch_max=(-half_slit, inf, inf),
             two_sided=True),
        Wall((0.0, 0.0, elev), (0.0, 0.0, 1.0), patch_min=(half_slit, -inf, -inf), patch_max=(half_w, inf, inf),
             two_sided=True),
    ]
    info = dict(geo)
    info["capacity"] = capacity
    return Scene(particles, walls, materials_from(cfg), sc, info)


_BUILDERS = {"box_slit": box_slit, "random_gas": random_gas, "two_body": two_body, "stack": stack}


def build_scene(cfg: RunConfig) -> Scene:
    if cfg.scene != "two_body" and cfg.particle_count <= 0:
        raise ConfigError("particle_count must be positive")
    return _BUILDERS[cfg.scene](cfg)


def min_pair_gap(particles: ParticleSet) -> float:
    """Smallest surface separation over all pairs (O(N^2), for validation only)."""
    pos, rad = particles.position, particles.radius
    best = math.inf
    for i in range(particles.count - 1):
        d = np.sqrt(np.sum((pos[i + 1:] - pos[i]) ** 2, axis=1)) - rad[i + 1:] - rad[i]
        if d.size:
            best = min(best, float(d.min()))
    return best
