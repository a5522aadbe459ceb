"""Particle state, material pairs, walls and the global run configuration.

Particle data is held as a structure of arrays.  Kinematic quantities live in
two buffers: a step reads ``prev`` and writes ``next``; :func:`swap_buffers`
exchanges them at the step barrier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

MODELS = ("simple", "practical")


class IncompleteWriteError(RuntimeError):
    """Raised when a buffer swap happens before every particle was written."""


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    return arr


def _per_particle(value, n: int, name: str, fill=0.0, dtype=np.float64, width=3) -> np.ndarray:
    if value is None:
        shape = (n, width) if width else (n,)
        return np.full(shape, fill, dtype=dtype)
    arr = np.array(value, dtype=dtype)
    if width and arr.ndim == 1 and arr.shape == (width,) and n != width:
        arr = np.tile(arr, (n, 1))
    if not width and arr.ndim == 0:
        arr = np.full(n, arr, dtype=dtype)
    expected = (n, width) if width else (n,)
    if arr.shape != expected:
        raise ValueError(f"{name} must have shape {expected}, got {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass
class StateBuffer:
    """One copy of the per-step kinematic state plus force accumulators."""

    position: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray
    force: np.ndarray
    torque: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "StateBuffer":
        return cls(*(np.zeros((n, 3)) for _ in range(5)))

    def arrays(self):
        return (self.position, self.velocity, self.angular_velocity, self.force, self.torque)

    def take(self, order: np.ndarray) -> "StateBuffer":
        return StateBuffer(*(a[order] for a in self.arrays()))

    def copy(self) -> "StateBuffer":
        return StateBuffer(*(a.copy() for a in self.arrays()))


class ParticleSet:
    """Structure-of-arrays particle state with double-buffered kinematics.

    ``radius``, ``mass``, ``material`` and ``ids`` are per-particle constants
    shared by both buffers.  ``ids`` is a persistent identity that survives
    reordering; tangential contact history is keyed on it.
    """

    def __init__(
        self,
        position,
        radius,
        mass,
        velocity=None,
        angular_velocity=None,
        material=None,
        ids=None,
    ):
        position = np.array(position, dtype=np.float64).reshape(-1, 3)
        n = position.shape[0]
        self.radius = _per_particle(radius, n, "radius", width=0)
        self.mass = _per_particle(mass, n, "mass", width=0)
        self.material = _per_particle(material, n, "material", fill=0, dtype=np.int64, width=0)
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        self.ids = _per_particle(ids, n, "ids", dtype=np.int64, width=0)
        self.prev = StateBuffer(
            np.ascontiguousarray(position),
            _per_particle(velocity, n, "velocity"),
            _per_particle(angular_velocity, n, "angular_velocity"),
            np.zeros((n, 3)),
            np.zeros((n, 3)),
        )
        self.next = StateBuffer.zeros(n)
        self.written = np.zeros(n, dtype=bool)
        self.validate()

    @classmethod
    def _from_parts(cls, prev, nxt, radius, mass, material, ids, written) -> "ParticleSet":
        obj = cls.__new__(cls)
        obj.prev, obj.next = prev, nxt
        obj.radius, obj.mass, obj.material, obj.ids = radius, mass, material, ids
        obj.written = written
        return obj

    @property
    def count(self) -> int:
        return self.radius.shape[0]

    def __len__(self) -> int:
        return self.count

    # The previous buffer is the current, readable state.
    @property
    def position(self) -> np.ndarray:
        return self.prev.position

    @property
    def velocity(self) -> np.ndarray:
        return self.prev.velocity

    @property
    def angular_velocity(self) -> np.ndarray:
        return self.prev.angular_velocity

    @property
    def accumulated_force(self) -> np.ndarray:
        return self.next.force

    @property
    def accumulated_torque(self) -> np.ndarray:
        return self.next.torque

    def validate(self) -> None:
        n = self.count
        for name, arr in (("mass", self.mass), ("material", self.material), ("ids", self.ids)):
            if arr.shape != (n,):
                raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
        for buf in (self.prev, self.next):
            for arr in buf.arrays():
                if arr.shape != (n, 3):
                    raise ValueError(f"buffer array has shape {arr.shape}, expected {(n, 3)}")
        if self.written.shape != (n,):
            raise ValueError("write mask length mismatch")
        if n and not (np.all(self.radius > 0) and np.all(self.mass > 0)):
            raise ValueError("radius and mass must be strictly positive")
        if n and np.any(self.material < 0):
            raise ValueError("material ids must be non-negative")

    def permuted(self, order: np.ndarray, carry_next: bool = True) -> "ParticleSet":
        """Return a new set whose property ``P`` satisfies ``P_new[j] = P[order[j]]``.

        With ``carry_next=False`` the next buffer is replaced by zeros, which is
        what a step wants right after the sort.
        """
        return ParticleSet._from_parts(
            self.prev.take(order),
            self.next.take(order) if carry_next else StateBuffer.zeros(self.count),
            self.radius[order],
            self.mass[order],
            self.material[order],
            self.ids[order],
            self.written[order],
        )

    def copy(self) -> "ParticleSet":
        return ParticleSet._from_parts(
            self.prev.copy(),
            self.next.copy(),
            self.radius.copy(),
            self.mass.copy(),
            self.material.copy(),
            self.ids.copy(),
            self.written.copy(),
        )

    def in_id_order(self) -> "ParticleSet":
        return self.permuted(np.argsort(self.ids, kind="stable"))

    def momentum(self) -> np.ndarray:
        return (self.mass[:, None] * self.velocity).sum(axis=0)

    def kinetic_energy(self) -> float:
        inertia = 0.4 * self.mass * self.radius**2
        lin = 0.5 * np.sum(self.mass * np.einsum("ij,ij->i", self.velocity, self.velocity))
        rot = 0.5 * np.sum(inertia * np.einsum("ij,ij->i", self.angular_velocity, self.angular_velocity))
        return float(lin + rot)


def swap_buffers(particles: ParticleSet) -> ParticleSet:
    """Promote the next buffer to previous and clear the new accumulators.

    A partially written next buffer is an error.  A completely untouched one
    is allowed, which makes two back-to-back swaps an identity.
    """
    written = particles.written
    if written.any() and not written.all():
        missing = np.flatnonzero(~written)
        raise IncompleteWriteError(
            f"{missing.size} of {written.size} particles not written this step "
            f"(first missing index {missing[0]})"
        )
    particles.prev, particles.next = particles.next, particles.prev
    particles.next.force.fill(0.0)
    particles.next.torque.fill(0.0)
    written.fill(False)
    return particles


class MaterialPair(NamedTuple):
    spring_tangential: float
    spring_normal: float
    restitution: float
    friction: float


@dataclass(frozen=True)
class MaterialTable:
    """Contact parameters indexed by an ordered pair of material ids.

    All four tables are square, symmetric and non-negative.
    """

    spring_tangential: np.ndarray
    spring_normal: np.ndarray
    restitution: np.ndarray
    friction: np.ndarray

    def __post_init__(self):
        shape = None
        for name in ("spring_tangential", "spring_normal", "restitution", "friction"):
            arr = np.array(getattr(self, name), dtype=np.float64, ndmin=2)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ValueError(f"{name} must be a square matrix")
            if shape is not None and arr.shape != shape:
                raise ValueError("material tables disagree in size")
            shape = arr.shape
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} entries must be finite and non-negative")
            if not np.array_equal(arr, arr.T):
                raise ValueError(f"{name} must be symmetric")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def uniform(cls, spring_tangential, spring_normal, restitution, friction, n_materials=1):
        def full(v):
            return np.full((n_materials, n_materials), float(v))

        return cls(full(spring_tangential), full(spring_normal), full(restitution), full(friction))

    @property
    def n_materials(self) -> int:
        return self.spring_normal.shape[0]

    def pair(self, a: int, b: int) -> MaterialPair:
        return MaterialPair(
            float(self.spring_tangential[a, b]),
            float(self.spring_normal[a, b]),
            float(self.restitution[a, b]),
            float(self.friction[a, b]),
        )


_INF3 = (math.inf, math.inf, math.inf)
_NINF3 = (-math.inf, -math.inf, -math.inf)


@dataclass(frozen=True)
class Wall:
    """A static plane; particles live on the ``outward_normal`` side.

    By default the wall is an infinite one-sided plane.  Giving
    ``patch_min``/``patch_max`` bounds it to the rectangle where the plane
    meets that axis-aligned box (only for axis-aligned normals); particles
    beyond the rectangle touch its nearest edge or corner instead.  A
    ``two_sided`` wall is a thin plate that repels from both faces.
    """

    point: np.ndarray
    outward_normal: np.ndarray
    material: int = 0
    patch_min: np.ndarray = field(default=_NINF3)
    patch_max: np.ndarray = field(default=_INF3)
    two_sided: bool = False

    def __post_init__(self):
        normal = np.array(self.outward_normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-12:
            raise ValueError("wall normal must be a unit vector")
        lo = _vec3(self.patch_min, "patch_min").copy()
        hi = _vec3(self.patch_max, "patch_max").copy()
        if np.any(lo > hi):
            raise ValueError("patch_min must not exceed patch_max")
        if np.isfinite(lo).any() or np.isfinite(hi).any():
            axis = np.flatnonzero(normal != 0.0)
            if axis.size != 1:
                raise ValueError("bounded walls need an axis-aligned normal")
            lo[axis[0]], hi[axis[0]] = -math.inf, math.inf
        object.__setattr__(self, "outward_normal", normal)
        object.__setattr__(self, "point", _vec3(self.point, "point"))
        object.__setattr__(self, "patch_min", lo)
        object.__setattr__(self, "patch_max", hi)
        object.__setattr__(self, "two_sided", bool(self.two_sided))

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.patch_min).any() or np.isfinite(self.patch_max).any())

    def signed_distance(self, x) -> float:
        return float(np.dot(np.asarray(x, dtype=np.float64) - self.point, self.outward_normal))


class PackedWalls(NamedTuple):
    point: np.ndarray
    normal: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    material: np.ndarray
    two_sided: np.ndarray


def pack_walls(walls: Sequence[Wall]) -> PackedWalls:
    n = len(walls)
    if n == 0:
        z = np.zeros((0, 3))
        return PackedWalls(z, z.copy(), z.copy(), z.copy(), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.bool_))
    return PackedWalls(
        np.array([w.point for w in walls]),
        np.array([w.outward_normal for w in walls]),
        np.array([w.patch_min for w in walls]),
        np.array([w.patch_max for w in walls]),
        np.array([w.material for w in walls], dtype=np.int64),
        np.array([w.two_sided for w in walls], dtype=np.bool_),
    )


@dataclass
class SimConfig:
    dt: float
    domain_min: np.ndarray
    domain_max: np.ndarray
    cell_edge: np.ndarray
    gravity: np.ndarray = (0.0, 0.0, -9.81)
    termination_eps: float = 1e-8
    max_steps: int = 100_000
    model: str = "practical"
    k_sp: float = 0.0
    k_da: float = 0.0
    k_sh: float = 0.0
    # rescale the stored tangential displacement when the friction cap fires
    slip_rescale: bool = False

    def __post_init__(self):
        self.domain_min = _vec3(self.domain_min, "domain_min")
        self.domain_max = _vec3(self.domain_max, "domain_max")
        edge = np.asarray(self.cell_edge, dtype=np.float64)
        self.cell_edge = np.full(3, float(edge)) if edge.ndim == 0 else _vec3(edge, "cell_edge")
        self.gravity = _vec3(self.gravity, "gravity")
        self.dt = float(self.dt)
        self.max_steps = int(self.max_steps)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(self.domain_max > self.domain_min):
            raise ValueError("domain_max must exceed domain_min componentwise")
        if not np.all(self.cell_edge > 0):
            raise ValueError("cell_edge must be positive")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if np.any(self.grid_dims < 3):
            raise ValueError(f"grid needs at least 3 cells per axis, got {tuple(self.grid_dims)}")

    @property
    def grid_dims(self) -> np.ndarray:
        return np.floor((self.domain_max - self.domain_min) / self.cell_edge).astype(np.int64)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.grid_dims))

    @property
    def simple_constants(self):
        return self.k_sp, self.k_da, self.k_sh


def default_cell_edge(particles: ParticleSet) -> float:
    """Largest particle diameter, the smallest edge that keeps detection complete."""
    return float(2.0 * particles.radius.max())


def solid_sphere_inertia(mass, radius):
    return 0.4 * np.asarray(mass) * np.asarray(radius) ** 2


__all__ = [
    "IncompleteWriteError",
    "MaterialPair",
    "MaterialTable",
    "PackedWalls",
    "ParticleSet",
    "SimConfig",
    "StateBuffer",
    "Wall",
    "default_cell_edge",
    "pack_walls",
    "solid_sphere_inertia",
    "swap_buffers",
]
