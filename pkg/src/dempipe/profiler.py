"""Per-step divergence counters and the analytic SIMT cost estimates.

The estimates follow the usual lock-step reasoning: a warp of ``width``
threads running ``M`` distinct instruction paths is serialised ``M`` ways,
and a cell block of 27 cells sized to one diameter holds about
``27 * sqrt(2)`` close-packed candidates of which at most 12 can touch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KISSING_NUMBER = 12
CELLS_SEARCHED_3D = 27
WARP_WIDTH = 32

# branch outcomes of one candidate visit, OR-ed into a bit mask by the kernels
PATH_NO_CONTACT = 1
PATH_CONTACT = 2
PATH_CONTACT_CAPPED = 4


@dataclass
class StepStats:
    candidates_checked: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    contacts_found: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sqrt_calls: int = 0
    norm_sqrt_calls: int = 0
    branch_path_count: int = 0
    wall_checks: int = 0
    wall_contacts: int = 0

    @property
    def total_candidates(self) -> int:
        return int(self.candidates_checked.sum())

    @property
    def total_contacts(self) -> int:
        return int(self.contacts_found.sum())

    @property
    def max_contacts(self) -> int:
        return int(self.contacts_found.max()) if self.contacts_found.size else 0

    def check(self) -> None:
        if np.any(self.contacts_found > self.candidates_checked):
            raise AssertionError("a particle reports more contacts than candidates")
        if np.any(self.candidates_checked < 0) or min(self.sqrt_calls, self.wall_checks, self.wall_contacts) < 0:
            raise AssertionError("negative counter")

    def summary(self) -> dict:
        total = self.total_candidates
        return {
            "candidates": total,
            "contacts": self.total_contacts,
            "max_contacts": self.max_contacts,
            "max_candidates": int(self.candidates_checked.max()) if self.candidates_checked.size else 0,
            "divergence_ratio": self.total_contacts / total if total else float("nan"),
            "sqrt_calls": self.sqrt_calls,
            "norm_sqrt_calls": self.norm_sqrt_calls,
            "branch_path_count": self.branch_path_count,
            "wall_checks": self.wall_checks,
            "wall_contacts": self.wall_contacts,
        }


def record_step(candidates, contacts, worker_counters=()) -> StepStats:
    """Merge per-worker counter tuples into one StepStats.

    ``worker_counters`` holds, per worker in ascending id order,
    ``(sqrt_calls, norm_sqrt_calls, path_mask, wall_checks, wall_contacts)``.
    """
    sqrt_calls = norm_calls = mask = wall_checks = wall_contacts = 0
    for c in worker_counters:
        sqrt_calls += int(c[0])
        norm_calls += int(c[1])
        mask |= int(c[2])
        wall_checks += int(c[3])
        wall_contacts += int(c[4])
    return StepStats(
        np.asarray(candidates, dtype=np.int64),
        np.asarray(contacts, dtype=np.int64),
        sqrt_calls,
        norm_calls,
        bin(mask).count("1"),
        wall_checks,
        wall_contacts,
    )


def packing_capacity(L_x: float, L_y: float, L_z: float, d: float) -> float:
    """Close-packed spheres of diameter d per cell: layers of d, sqrt(3)d/2 and sqrt(2/3)d."""
    if min(L_x, L_y, L_z, d) <= 0:
        raise ValueError("cell edges and diameter must be positive")
    return math.sqrt(2.0) * L_x * L_y * L_z / d**3


def candidate_bound(cells_searched: int, capacity: float) -> float:
    """Worst-case candidates one thread checks.

    With 27 cells and unit capacity this is 27*sqrt(2) ~ 38.2.  The figure
    of "about 47" often quoted alongside it matches 27*sqrt(3) instead; the
    literal product is returned.
    """
    if cells_searched < 1:
        raise ValueError("cells_searched must be >= 1")
    return cells_searched * capacity


def divergence_ratio(stats: StepStats, mask=None) -> float:
    """Fraction of candidate checks that led to a force evaluation."""
    cand = stats.candidates_checked
    cont = stats.contacts_found
    if mask is not None:
        cand, cont = cand[mask], cont[mask]
    total = int(cand.sum())
    if total <= 0:
        raise ValueError("divergence ratio undefined: no candidates were checked")
    return int(cont.sum()) / total


def speedup_bound(distinct_paths: int, warp_width: int = WARP_WIDTH) -> float:
    if distinct_paths < 1 or warp_width < distinct_paths:
        raise ValueError("need 1 <= distinct_paths <= warp_width")
    return warp_width / distinct_paths


def warp_efficiency(candidates, width: int = WARP_WIDTH) -> float:
    """Useful fraction of lock-step loop iterations when consecutive particles share a warp.

    Each warp runs as many iterations as its busiest thread; the ratio of
    total work to ``width * max`` summed over warps measures the idle time
    caused by uneven candidate counts.
    """
    c = np.asarray(candidates, dtype=np.int64)
    if c.size == 0:
        return 1.0
    pad = (-c.size) % width
    warps = np.concatenate([c, np.zeros(pad, dtype=np.int64)]).reshape(-1, width)
    lockstep = int((warps.max(axis=1) * width).sum())
    return float(c.sum() / lockstep) if lockstep else 1.0
