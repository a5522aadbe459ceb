"""Collision-detection grid: cell assignment, sorted maps and candidate lookup.

Cells are linearised as ``i + nx * (j + ny * k)``.  After sorting, particle
``j`` in sorted order sits in cell ``SCM[j]`` and came from original index
``SCCM[j]``, so ``SCM[j] == CM[SCCM[j]]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .state import ParticleSet, SimConfig


@dataclass
class GridMaps:
    CM: np.ndarray
    SCM: np.ndarray
    SCCM: np.ndarray
    cell_start: np.ndarray
    cell_end: np.ndarray
    dims: np.ndarray

    @property
    def max_occupancy(self) -> int:
        if self.cell_start.size == 0:
            return 0
        return int(np.max(self.cell_end - self.cell_start))


def cell_triple(position, config: SimConfig) -> tuple[int, int, int]:
    p = np.asarray(position, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"non-finite position {p}")
    dims = config.grid_dims
    rel = (p - config.domain_min) / config.cell_edge
    ijk = np.clip(np.floor(rel), 0, dims - 1).astype(np.int64)
    return int(ijk[0]), int(ijk[1]), int(ijk[2])


def linear_index(triple, dims) -> int:
    i, j, k = triple
    return int(i + dims[0] * (j + dims[1] * k))


def unravel(cell: int, dims) -> tuple[int, int, int]:
    nx, ny = int(dims[0]), int(dims[1])
    return cell % nx, (cell // nx) % ny, cell // (nx * ny)


def cell_index(position, config: SimConfig) -> int:
    """Linear index of the cell containing ``position``; outside points are clamped."""
    return linear_index(cell_triple(position, config), config.grid_dims)


def build_correspondence_map(particles, config: SimConfig) -> np.ndarray:
    """CM[j] = cell index of particle j.  Accepts a ParticleSet or an (N, 3) array."""
    pos = particles.position if isinstance(particles, ParticleSet) else np.asarray(particles, dtype=np.float64)
    pos = pos.reshape(-1, 3)
    if not np.all(np.isfinite(pos)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(pos), axis=1))[0])
        raise ValueError(f"non-finite position for particle {bad}")
    dims = config.grid_dims
    rel = (pos - config.domain_min) / config.cell_edge
    ijk = np.clip(np.floor(rel), 0, dims - 1).astype(np.int64)
    return ijk[:, 0] + dims[0] * (ijk[:, 1] + dims[1] * ijk[:, 2])


def sort_map(CM) -> tuple[np.ndarray, np.ndarray]:
    """Stable sort of the correspondence map; returns (SCM, SCCM)."""
    CM = np.asarray(CM, dtype=np.int64)
    SCCM = np.argsort(CM, kind="stable")
    return CM[SCCM], SCCM


def is_permutation(order, n: int) -> bool:
    order = np.asarray(order)
    if order.shape != (n,):
        return False
    if n == 0:
        return True
    if order.min() < 0 or order.max() >= n:
        return False
    return bool(np.all(np.bincount(order, minlength=n) == 1))


def reorder_properties(particles: ParticleSet, SCCM, carry_next: bool = True) -> ParticleSet:
    SCCM = np.asarray(SCCM, dtype=np.int64)
    if not is_permutation(SCCM, particles.count):
        raise ValueError("SCCM is not a permutation of the particle indices")
    return particles.permuted(SCCM, carry_next)


@numba.njit(cache=True)
def _cell_ranges(scm, n_cells, start, end):
    n = scm.shape[0]
    p = 0
    for c in range(n_cells):
        while p < n and scm[p] < c:
            p += 1
        start[c] = p
        q = p
        while q < n and scm[q] == c:
            q += 1
        end[c] = q
        p = q


def cell_ranges(SCM, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell half-open ranges into the sorted map."""
    SCM = np.asarray(SCM, dtype=np.int64)
    if SCM.size > 1 and np.any(SCM[1:] < SCM[:-1]):
        raise ValueError("SCM must be non-decreasing")
    if SCM.size and (SCM[0] < 0 or SCM[-1] >= n_cells):
        raise ValueError("SCM holds a cell index outside [0, n_cells)")
    start = np.empty(n_cells, dtype=np.int64)
    end = np.empty(n_cells, dtype=np.int64)
    _cell_ranges(SCM, n_cells, start, end)
    return start, end


def neighbor_cells(triple, dims) -> list[int]:
    """In-bounds cells of the 3x3x3 block around ``triple``, ascending."""
    i, j, k = (int(t) for t in triple)
    nx, ny, nz = (int(d) for d in dims)
    out = []
    for n in range(max(k - 1, 0), min(k + 2, nz)):
        for m in range(max(j - 1, 0), min(j + 2, ny)):
            for l in range(max(i - 1, 0), min(i + 2, nx)):
                out.append(l + nx * (m + ny * n))
    return out


def candidate_particles(j: int, maps: GridMaps, dims=None) -> np.ndarray:
    """Sorted-order indices of every particle in j's cell block, except j."""
    dims = maps.dims if dims is None else dims
    cells = neighbor_cells(unravel(int(maps.SCM[j]), dims), dims)
    out = [np.arange(maps.cell_start[c], maps.cell_end[c]) for c in cells]
    idx = np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
    return idx[idx != j]


def build_grid_maps(particles: ParticleSet, config: SimConfig) -> GridMaps:
    CM = build_correspondence_map(particles, config)
    SCM, SCCM = sort_map(CM)
    start, end = cell_ranges(SCM, config.n_cells)
    return GridMaps(CM, SCM, SCCM, start, end, config.grid_dims)


def sort_particles(particles: ParticleSet, config: SimConfig) -> tuple[ParticleSet, GridMaps]:
    """Steps 2 to 4 of a step: map, sort and reorder into cell order."""
    maps = build_grid_maps(particles, config)
    return reorder_properties(particles, maps.SCCM, carry_next=False), maps
