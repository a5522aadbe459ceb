"""Pair contact forces: the simple spring-dashpot-shear law and the practical
Hertz-scaled law with Coulomb-capped tangential springs.

Conventions used throughout:

* ``n`` is the unit vector from particle i towards particle j;
* ``overlap = r_i + r_j - |x_j - x_i|`` and the normal spring always pushes i
  away from j;
* the practical model uses ``v = v_i - v_j``;
* the simple model's damping/shear terms take the partner-relative velocity
  ``v_j - v_i`` so that a positive ``k_da`` removes energy;
* tangential history is stored in the frame of the lower-id particle; the
  other particle sees its negation.

The ``_core`` functions are numba-compiled and are what the stepping kernels
call.  The public functions wrap them, or reimplement a single sub-step in
numpy, for use from Python and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .state import MaterialPair, Wall

# coefficient square roots per practical pair evaluation (stiffness, damping)
COEFF_SQRTS_PER_EVAL = 2


class TunnelingError(RuntimeError):
    """A particle centre ended up more than one radius behind a wall."""


@numba.njit(cache=True, inline="always")
def practical_core(nx, ny, nz, overlap, vx, vy, vz, wx, wy, wz, r_i, inv_r, inv_m,
                   c_t, c_n, alpha, mu, ox, oy, oz, dt, slip_rescale):
    """Practical-model force on i for one contact.

    ``v`` is ``v_i - v_j``, ``w`` is ``r_i*omega_i + r_j*omega_j``, ``inv_r``
    and ``inv_m`` are the reciprocal sums of radii and masses, ``o`` is the
    tangential displacement from the previous step in i's frame.

    Returns (Fx, Fy, Fz, Tx, Ty, Tz, dtx, dty, dtz, capped).
    """
    root = math.sqrt(overlap / inv_r)
    k_t = c_t * root
    k_n = c_n * root
    eta = alpha * math.sqrt(k_n / inv_m)

    vn = vx * nx + vy * ny + vz * nz
    vnx = vn * nx
    vny = vn * ny
    vnz = vn * nz
    # tangential slip: v - (v.n)n + w x n
    vtx = vx - vnx + (wy * nz - wz * ny)
    vty = vy - vny + (wz * nx - wx * nz)
    vtz = vz - vnz + (wx * ny - wy * nx)

    od = ox * nx + oy * ny + oz * nz
    dtx = ox - od * nx + vtx * dt
    dty = oy - od * ny + vty * dt
    dtz = oz - od * nz + vtz * dt

    fnx = -k_n * overlap * nx - eta * vnx
    fny = -k_n * overlap * ny - eta * vny
    fnz = -k_n * overlap * nz - eta * vnz
    ftx = -k_t * dtx - eta * vtx
    fty = -k_t * dty - eta * vty
    ftz = -k_t * dtz - eta * vtz

    fn_mag = math.sqrt(fnx * fnx + fny * fny + fnz * fnz)
    ft_mag = math.sqrt(ftx * ftx + fty * fty + ftz * ftz)
    limit = mu * fn_mag
    capped = False
    if ft_mag > limit:
        s = limit / ft_mag
        ftx *= s
        fty *= s
        ftz *= s
        capped = True
        if slip_rescale:
            dtx *= s
            dty *= s
            dtz *= s

    tx = r_i * (ny * ftz - nz * fty)
    ty = r_i * (nz * ftx - nx * ftz)
    tz = r_i * (nx * fty - ny * ftx)
    return (ftx + fnx, fty + fny, ftz + fnz, tx, ty, tz, dtx, dty, dtz, capped)


@numba.njit(cache=True, inline="always")
def simple_core(nx, ny, nz, overlap, ux, uy, uz, k_sp, k_da, k_sh):
    """Simple-model force on i; ``u`` is the partner-relative velocity."""
    un = ux * nx + uy * ny + uz * nz
    utx = ux - un * nx
    uty = uy - un * ny
    utz = uz - un * nz
    fx = k_sp * (-overlap * nx) + k_da * ux + k_sh * utx
    fy = k_sp * (-overlap * ny) + k_da * uy + k_sh * uty
    fz = k_sp * (-overlap * nz) + k_da * uz + k_sh * utz
    return fx, fy, fz


@numba.njit(cache=True, inline="always")
def wall_contact_core(x, y, z, r, px, py, pz, wx, wy, wz, lox, loy, loz, hix, hiy, hiz, two_sided):
    """Contact of a sphere with a (possibly bounded) wall.

    Returns (nx, ny, nz, overlap, tunnelled) with ``n`` pointing from the
    particle centre towards the wall.  Overlap may be negative (no contact).
    """
    sd = (x - px) * wx + (y - py) * wy + (z - pz) * wz
    qx = x - sd * wx
    qy = y - sd * wy
    qz = z - sd * wz
    cx = min(max(qx, lox), hix)
    cy = min(max(qy, loy), hiy)
    cz = min(max(qz, loz), hiz)
    if cx == qx and cy == qy and cz == qz:
        if sd >= 0.0 or not two_sided:
            if sd < -r:
                return 0.0, 0.0, 0.0, 0.0, True
            return -wx, -wy, -wz, r - sd, False
        return wx, wy, wz, r + sd, False
    ex = cx - x
    ey = cy - y
    ez = cz - z
    dist = math.sqrt(ex * ex + ey * ey + ez * ez)
    if dist == 0.0:
        return -wx, -wy, -wz, r, False
    return ex / dist, ey / dist, ez / dist, r - dist, False


# -- geometry -------------------------------------------------------------


class ContactGeometry(NamedTuple):
    n: np.ndarray
    overlap: float
    contact_exists: bool


def contact_geometry(x_i, x_j, r_i: float, r_j: float) -> ContactGeometry:
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    d = x_j - x_i
    dist = math.sqrt(float(d @ d))
    if dist == 0.0:
        raise ValueError("coincident particle centres: contact normal undefined")
    overlap = max(0.0, r_i + r_j - dist)
    return ContactGeometry(d / dist, overlap, overlap > 0.0)


def simple_contact_force(geom: ContactGeometry, v_rel, k_sp: float, k_da: float, k_sh: float) -> np.ndarray:
    """``k_sp * (-overlap n) + k_da * v_rel + k_sh * v_t`` with v_t the tangential part of v_rel."""
    v_rel = np.asarray(v_rel, dtype=np.float64)
    n = geom.n
    v_t = v_rel - (v_rel @ n) * n
    return k_sp * (-geom.overlap * n) + k_da * v_rel + k_sh * v_t


# -- practical sub-steps (numpy) -------------------------------------------


def stiffness_coeffs(pair: MaterialPair, r_i: float, r_j: float, overlap: float) -> tuple[float, float]:
    """(k_t, k_n); ``r_j = inf`` gives the wall limit."""
    root = math.sqrt(overlap / (1.0 / r_i + 1.0 / r_j))
    return pair.spring_tangential * root, pair.spring_normal * root


def damping_coeff(alpha: float, k_n: float, m_i: float, m_j: float) -> float:
    return alpha * math.sqrt(k_n / (1.0 / m_i + 1.0 / m_j))


def tangential_velocity(v_i, v_j, w_i, w_j, r_i, r_j, n) -> np.ndarray:
    v = np.asarray(v_i, dtype=np.float64) - np.asarray(v_j, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    spin = r_i * np.asarray(w_i, dtype=np.float64) + r_j * np.asarray(w_j, dtype=np.float64)
    return v - (v @ n) * n + np.cross(spin, n)


def update_tangential_displacement(d_old, n, v_t, dt: float) -> np.ndarray:
    d_old = np.asarray(d_old, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return d_old - (d_old @ n) * n + np.asarray(v_t, dtype=np.float64) * dt


def friction_cap(F_t, F_n, mu):
    """Rescale F_t onto the Coulomb limit ``mu |F_n|`` when it exceeds it.

    Works on single 3-vectors or on stacks of shape (N, 3) with ``mu`` scalar
    or shape (N,).
    """
    F_t = np.asarray(F_t, dtype=np.float64)
    F_n = np.asarray(F_n, dtype=np.float64)
    ft = np.sqrt(np.sum(F_t * F_t, axis=-1))
    limit = np.asarray(mu, dtype=np.float64) * np.sqrt(np.sum(F_n * F_n, axis=-1))
    over = ft > limit
    scale = np.where(over, limit / np.where(over, ft, 1.0), 1.0)
    return F_t * scale[..., None] if F_t.ndim > 1 else F_t * float(scale)


# -- full pair evaluations ---------------------------------------------------


class Body(NamedTuple):
    """Kinematic snapshot of one particle for a pair evaluation."""

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    r: float
    m: float


@dataclass
class PairForceResult:
    F: np.ndarray
    T: np.ndarray
    new_delta_t: np.ndarray
    capped: bool = False


def _result(out) -> PairForceResult:
    return PairForceResult(np.array(out[0:3]), np.array(out[3:6]), np.array(out[6:9]), bool(out[9]))


def practical_pair_force(
    body_i: Body, body_j: Body, pair: MaterialPair, delta_t_old, dt: float, slip_rescale: bool = False
) -> PairForceResult:
    """Force and torque on i from a contact with j, plus the updated tangential displacement."""
    geom = contact_geometry(body_i.x, body_j.x, body_i.r, body_j.r)
    if not geom.contact_exists:
        raise ValueError("particles are not in contact")
    n = geom.n
    v = np.asarray(body_i.v, dtype=np.float64) - np.asarray(body_j.v, dtype=np.float64)
    w = body_i.r * np.asarray(body_i.w, dtype=np.float64) + body_j.r * np.asarray(body_j.w, dtype=np.float64)
    o = np.zeros(3) if delta_t_old is None else np.asarray(delta_t_old, dtype=np.float64)
    out = practical_core(
        n[0], n[1], n[2], geom.overlap, v[0], v[1], v[2], w[0], w[1], w[2],
        float(body_i.r), 1.0 / body_i.r + 1.0 / body_j.r, 1.0 / body_i.m + 1.0 / body_j.m,
        pair.spring_tangential, pair.spring_normal, pair.restitution, pair.friction,
        o[0], o[1], o[2], float(dt), bool(slip_rescale),
    )
    return _result(out)


def wall_contact(body: Body, wall: Wall) -> ContactGeometry:
    """Contact normal (particle towards wall) and overlap; raises if the particle tunnelled."""
    x = np.asarray(body.x, dtype=np.float64)
    p, n, lo, hi = wall.point, wall.outward_normal, wall.patch_min, wall.patch_max
    out = wall_contact_core(x[0], x[1], x[2], float(body.r), p[0], p[1], p[2], n[0], n[1], n[2],
                            lo[0], lo[1], lo[2], hi[0], hi[1], hi[2], wall.two_sided)
    if out[4]:
        raise TunnelingError(f"particle centre more than one radius behind the wall (radius {body.r:.3e})")
    overlap = max(0.0, out[3])
    return ContactGeometry(np.array(out[0:3]), overlap, overlap > 0.0)


def wall_pair_force(
    body: Body, wall: Wall, pair: MaterialPair, delta_t_old, dt: float, slip_rescale: bool = False
) -> PairForceResult:
    """Contact with a wall treated as a static particle of infinite radius and mass."""
    geom = wall_contact(body, wall)
    if not geom.contact_exists:
        z = np.zeros(3)
        return PairForceResult(z, z.copy(), z.copy(), False)
    n = geom.n
    v = np.asarray(body.v, dtype=np.float64)
    w = body.r * np.asarray(body.w, dtype=np.float64)
    o = np.zeros(3) if delta_t_old is None else np.asarray(delta_t_old, dtype=np.float64)
    out = practical_core(
        n[0], n[1], n[2], geom.overlap, v[0], v[1], v[2], w[0], w[1], w[2],
        float(body.r), 1.0 / body.r, 1.0 / body.m,
        pair.spring_tangential, pair.spring_normal, pair.restitution, pair.friction,
        o[0], o[1], o[2], float(dt), bool(slip_rescale),
    )
    return _result(out)


# -- tangential history ------------------------------------------------------


def pair_key(id_a, id_b, n_ids: int):
    """Key for an unordered particle pair; works elementwise on arrays."""
    lo = np.minimum(id_a, id_b)
    hi = np.maximum(id_a, id_b)
    return lo * np.int64(n_ids) + hi


def wall_key(particle_id, wall_index, n_walls: int):
    return particle_id * np.int64(max(n_walls, 1)) + wall_index


class TangentialHistory:
    """Sorted key -> displacement table.

    Keys are int64 (see :func:`pair_key` and :func:`wall_key`); values are
    3-vectors in the frame of the lower-id particle (for walls, the particle).
    """

    def __init__(self, keys=None, values=None):
        keys = np.zeros(0, dtype=np.int64) if keys is None else np.asarray(keys, dtype=np.int64)
        values = np.zeros((0, 3)) if values is None else np.asarray(values, dtype=np.float64).reshape(-1, 3)
        if keys.shape[0] != values.shape[0]:
            raise ValueError("keys and values differ in length")
        order = np.argsort(keys, kind="stable")
        keys, values = keys[order], values[order]
        if keys.size > 1 and np.any(keys[1:] == keys[:-1]):
            raise ValueError("duplicate history keys")
        if not np.all(np.isfinite(values)):
            raise ValueError("history values must be finite")
        self.keys = np.ascontiguousarray(keys)
        self.values = np.ascontiguousarray(values)

    @classmethod
    def from_dict(cls, mapping) -> "TangentialHistory":
        keys = np.fromiter(mapping.keys(), dtype=np.int64, count=len(mapping))
        values = np.array([mapping[k] for k in mapping], dtype=np.float64).reshape(-1, 3)
        return cls(keys, values)

    def __len__(self) -> int:
        return self.keys.size

    def __contains__(self, key) -> bool:
        i = np.searchsorted(self.keys, key)
        return bool(i < self.keys.size and self.keys[i] == key)

    def get(self, key) -> np.ndarray:
        i = np.searchsorted(self.keys, key)
        if i < self.keys.size and self.keys[i] == key:
            return self.values[i].copy()
        return np.zeros(3)

    def to_dict(self) -> dict:
        return {int(k): v.copy() for k, v in zip(self.keys, self.values)}

    def copy(self) -> "TangentialHistory":
        return TangentialHistory(self.keys.copy(), self.values.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, TangentialHistory):
            return NotImplemented
        return np.array_equal(self.keys, other.keys) and np.array_equal(self.values, other.values)


def history_prune(history: TangentialHistory, contact_keys) -> TangentialHistory:
    """Keep entries for current contacts; new contacts start from zero."""
    keys = np.unique(np.asarray(contact_keys, dtype=np.int64))
    values = np.zeros((keys.size, 3))
    if keys.size and len(history):
        pos = np.searchsorted(history.keys, keys)
        pos_c = np.minimum(pos, len(history) - 1)
        hit = history.keys[pos_c] == keys
        values[hit] = history.values[pos_c[hit]]
    return TangentialHistory(keys, values)


@dataclass
class ContactHistory:
    """Tangential displacement tables for particle pairs and particle-wall pairs."""

    pairs: TangentialHistory
    walls: TangentialHistory

    @classmethod
    def empty(cls) -> "ContactHistory":
        return cls(TangentialHistory(), TangentialHistory())

    def copy(self) -> "ContactHistory":
        return ContactHistory(self.pairs.copy(), self.walls.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContactHistory):
            return NotImplemented
        return self.pairs == other.pairs and self.walls == other.walls
