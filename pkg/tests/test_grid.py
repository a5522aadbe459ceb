import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dempipe.grid import (
    build_correspondence_map,
    build_grid_maps,
    candidate_particles,
    cell_index,
    cell_ranges,
    cell_triple,
    is_permutation,
    neighbor_cells,
    reorder_properties,
    sort_map,
)
from dempipe.state import ParticleSet, SimConfig

from oracles import scalar_cell_map

CFG = SimConfig(dt=1e-3, domain_min=(-1.0, 0.0, 2.0), domain_max=(1.0, 1.0, 3.0), cell_edge=0.1)


def test_cell_index_origin():
    assert cell_triple(CFG.domain_min, CFG) == (0, 0, 0)
    assert cell_index(CFG.domain_min, CFG) == 0


def test_cell_index_direct_floor():
    p = CFG.domain_min + np.array([1.5, 0.2, 2.7]) * CFG.cell_edge
    assert cell_triple(p, CFG) == (1, 0, 2)
    nx, ny, _ = CFG.grid_dims
    assert cell_index(p, CFG) == 1 + nx * (0 + ny * 2)


def test_cell_index_clamps_outside():
    nx, ny, nz = CFG.grid_dims
    assert cell_triple(CFG.domain_max + 5.0, CFG) == (nx - 1, ny - 1, nz - 1)
    assert cell_triple(CFG.domain_min - 5.0, CFG) == (0, 0, 0)


def test_cell_index_non_finite():
    with pytest.raises(ValueError):
        cell_index((np.nan, 0.0, 2.5), CFG)
    with pytest.raises(ValueError):
        build_correspondence_map(np.array([[0.0, 0.5, np.inf]]), CFG)


def test_cm_small_cases():
    assert build_correspondence_map(np.array([CFG.domain_min]), CFG).tolist() == [0]
    cm = build_correspondence_map(np.array([[0.01, 0.51, 2.51], [0.02, 0.52, 2.52]]), CFG)
    assert cm[0] == cm[1]


def test_cm_matches_scalar_loop():
    rng = np.random.default_rng(3)
    pos = rng.uniform(-1.3, 3.3, (2000, 3))
    cm = build_correspondence_map(pos, CFG)
    assert np.array_equal(cm, scalar_cell_map(pos, CFG.domain_min, CFG.cell_edge, CFG.grid_dims))


def test_sort_map_examples():
    scm, sccm = sort_map([5])
    assert scm.tolist() == [5] and sccm.tolist() == [0]
    scm, sccm = sort_map([2, 0, 1])
    assert scm.tolist() == [0, 1, 2] and sccm.tolist() == [1, 2, 0]
    _, sccm = sort_map([3, 3, 3])
    assert sccm.tolist() == [0, 1, 2]


def test_sort_map_all_permutations_of_small_maps():
    for n in range(1, 6):
        for cm in itertools.product(range(3), repeat=n):
            cm = np.array(cm)
            scm, sccm = sort_map(cm)
            assert np.array_equal(scm, cm[sccm])
            assert np.all(np.diff(scm) >= 0)
            # stable: equal cells keep their original order
            for a, b in zip(sccm[:-1], sccm[1:]):
                if cm[a] == cm[b]:
                    assert a < b


@given(arrays(np.int64, st.integers(0, 300), elements=st.integers(0, 40)))
def test_sort_identity_property(cm):
    scm, sccm = sort_map(cm)
    assert is_permutation(sccm, len(cm))
    assert np.array_equal(scm, cm[sccm])


def _particles(n, seed=0):
    rng = np.random.default_rng(seed)
    return ParticleSet(rng.normal(size=(n, 3)), rng.uniform(1, 2, n), rng.uniform(1, 2, n),
                       velocity=rng.normal(size=(n, 3)), angular_velocity=rng.normal(size=(n, 3)),
                       material=rng.integers(0, 3, n))


def test_reorder_identity_and_swap():
    p = _particles(2)
    same = reorder_properties(p, np.array([0, 1]))
    assert np.array_equal(same.position, p.position) and np.array_equal(same.mass, p.mass)
    sw = reorder_properties(p, np.array([1, 0]))
    assert np.array_equal(sw.position, p.position[::-1])
    assert np.array_equal(sw.radius, p.radius[::-1])
    assert np.array_equal(sw.material, p.material[::-1])


def test_reorder_all_properties_follow_sccm():
    p = _particles(50, seed=4)
    order = np.random.default_rng(5).permutation(50)
    q = reorder_properties(p, order)
    for a, b in [(q.position, p.position), (q.velocity, p.velocity), (q.angular_velocity, p.angular_velocity),
                 (q.radius, p.radius), (q.mass, p.mass), (q.material, p.material), (q.ids, p.ids),
                 (q.accumulated_force, p.accumulated_force)]:
        assert np.array_equal(a, b[order])


@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_reorder_then_inverse_is_identity(n, seed):
    p = _particles(n, seed % 1000)
    order = np.random.default_rng(seed).permutation(n)
    back = reorder_properties(reorder_properties(p, order), np.argsort(order))
    assert np.array_equal(back.position, p.position)
    assert np.array_equal(back.angular_velocity, p.angular_velocity)


def test_reorder_rejects_non_permutation():
    with pytest.raises(ValueError):
        reorder_properties(_particles(3), np.array([0, 0, 1]))
    with pytest.raises(ValueError):
        reorder_properties(_particles(3), np.array([0, 1]))


def _scan_oracle(scm, n_cells):
    start, end = [], []
    for k in range(n_cells):
        idx = [j for j, c in enumerate(scm) if c == k]
        first = idx[0] if idx else sum(1 for c in scm if c < k)
        start.append(first)
        end.append(first + len(idx))
    return start, end


def test_cell_ranges_examples():
    s, e = cell_ranges(np.array([0, 0, 2]), 3)
    assert s.tolist() == [0, 2, 2] and e.tolist() == [2, 2, 3]
    s, e = cell_ranges(np.array([], dtype=np.int64), 4)
    assert np.array_equal(s, e)
    s, e = cell_ranges(np.array([1]), 3)
    assert (s[1], e[1]) == (0, 1)
    assert s[0] == e[0] and s[2] == e[2]


@given(arrays(np.int64, st.integers(0, 200), elements=st.integers(0, 29)))
def test_cell_ranges_match_scan(cm):
    scm = np.sort(cm)
    s, e = cell_ranges(scm, 30)
    assert (s.tolist(), e.tolist()) == _scan_oracle(scm.tolist(), 30)
    assert int((e - s).sum()) == len(scm)
    for k in range(30):
        assert np.all(scm[s[k]:e[k]] == k)


def test_cell_ranges_rejects_unsorted():
    with pytest.raises(ValueError):
        cell_ranges(np.array([2, 1]), 3)


def test_neighbor_cells_counts():
    dims = (5, 5, 5)
    assert len(neighbor_cells((2, 2, 2), dims)) == 27
    assert len(neighbor_cells((0, 0, 0), dims)) == 8
    assert len(neighbor_cells((0, 2, 2), dims)) == 18
    cells = neighbor_cells((2, 2, 2), dims)
    assert cells == sorted(cells)


def test_neighbor_cells_exact_members():
    dims = (4, 6, 5)
    for triple in itertools.product(range(4), range(6), range(5)):
        expect = sorted(
            l + dims[0] * (m + dims[1] * n)
            for l in range(triple[0] - 1, triple[0] + 2)
            for m in range(triple[1] - 1, triple[1] + 2)
            for n in range(triple[2] - 1, triple[2] + 2)
            if 0 <= l < dims[0] and 0 <= m < dims[1] and 0 <= n < dims[2]
        )
        assert neighbor_cells(triple, dims) == expect


def test_candidates_single_and_pair():
    cfg = SimConfig(dt=1e-3, domain_min=(0, 0, 0), domain_max=(1, 1, 1), cell_edge=0.2)
    one = ParticleSet(np.array([[0.5, 0.5, 0.5]]), 0.1, 1.0)
    maps = build_grid_maps(one, cfg)
    assert candidate_particles(0, maps).size == 0
    two = ParticleSet(np.array([[0.45, 0.5, 0.5], [0.5, 0.5, 0.5]]), 0.1, 1.0)
    maps = build_grid_maps(two, cfg)
    assert candidate_particles(0, maps).tolist() == [1]
    assert candidate_particles(1, maps).tolist() == [0]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 300), st.integers(0, 10**6))
def test_candidates_superset_of_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    rad = rng.uniform(0.01, 0.05, n)
    cfg = SimConfig(dt=1e-3, domain_min=(0, 0, 0), domain_max=(1, 1, 1), cell_edge=2 * rad.max())
    pos = rng.uniform(-0.1, 1.1, (n, 3))  # some outside, exercising the clamp
    p = ParticleSet(pos, rad, 1.0)
    maps = build_grid_maps(p, cfg)
    sorted_pos, sorted_rad = pos[maps.SCCM], rad[maps.SCCM]
    for j in range(n):
        cand = set(candidate_particles(j, maps).tolist())
        d = np.linalg.norm(sorted_pos - sorted_pos[j], axis=1)
        touching = set(np.flatnonzero(d < sorted_rad + sorted_rad[j]).tolist()) - {j}
        assert touching <= cand
        assert j not in cand
