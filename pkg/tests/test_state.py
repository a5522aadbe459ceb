import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dempipe.state import (
    IncompleteWriteError,
    MaterialTable,
    ParticleSet,
    SimConfig,
    Wall,
    pack_walls,
    solid_sphere_inertia,
    swap_buffers,
)


def _two(pos=((0, 0, 0), (1, 0, 0))):
    return ParticleSet(np.array(pos, dtype=float), radius=0.5, mass=1.0)


def test_arrays_share_length():
    p = ParticleSet(np.zeros((4, 3)), radius=[1, 2, 3, 4], mass=1.0)
    p.validate()
    for arr in (p.position, p.velocity, p.angular_velocity, p.radius, p.mass, p.material,
                p.accumulated_force, p.accumulated_torque):
        assert len(arr) == p.count == 4


@pytest.mark.parametrize("kw", [dict(radius=0.0, mass=1.0), dict(radius=1.0, mass=-1.0),
                                dict(radius=[1.0, 1.0], mass=1.0)])
def test_rejects_bad_particles(kw):
    with pytest.raises(ValueError):
        ParticleSet(np.zeros((3, 3)), **kw)


def test_swap_fixed_point_when_nothing_moves():
    p = _two()
    before = p.prev.copy()
    p.next.position[:] = p.prev.position
    p.next.velocity[:] = p.prev.velocity
    p.next.angular_velocity[:] = p.prev.angular_velocity
    p.written[:] = True
    swap_buffers(p)
    for a, b in zip(before.arrays(), p.prev.arrays()):
        assert np.array_equal(a, b)


def test_double_swap_without_writes_is_identity():
    p = _two()
    p.prev.velocity[0] = (1.0, 2.0, 3.0)
    snap_prev = [a.copy() for a in p.prev.arrays()]
    snap_next = [a.copy() for a in p.next.arrays()]
    swap_buffers(p)
    swap_buffers(p)
    for a, b in zip(snap_prev, p.prev.arrays()):
        assert np.array_equal(a, b)
    for a, b in zip(snap_next, p.next.arrays()):
        assert np.array_equal(a, b)


def test_swap_with_partial_write_set_fails():
    p = _two()
    p.written[0] = True
    with pytest.raises(IncompleteWriteError):
        swap_buffers(p)


def test_swap_zeroes_new_accumulators():
    p = _two()
    p.prev.force[:] = 7.0
    p.prev.torque[:] = 3.0
    p.written[:] = True
    swap_buffers(p)
    assert not p.next.force.any() and not p.next.torque.any()
    assert not p.written.any()


@given(st.permutations(list(range(6))))
def test_permuted_by_inverse_restores(order):
    rng = np.random.default_rng(1)
    p = ParticleSet(rng.normal(size=(6, 3)), rng.uniform(1, 2, 6), rng.uniform(1, 2, 6),
                    velocity=rng.normal(size=(6, 3)))
    order = np.array(order)
    back = p.permuted(order).permuted(np.argsort(order))
    assert np.array_equal(back.position, p.position)
    assert np.array_equal(back.velocity, p.velocity)
    assert np.array_equal(back.ids, p.ids)


def test_material_table_must_be_symmetric_and_nonnegative():
    ok = np.array([[1.0, 2.0], [2.0, 1.0]])
    MaterialTable(ok, ok, ok, ok)
    with pytest.raises(ValueError):
        MaterialTable(np.array([[1.0, 2.0], [3.0, 1.0]]), ok, ok, ok)
    with pytest.raises(ValueError):
        MaterialTable(ok, ok, -ok, ok)
    with pytest.raises(ValueError):
        MaterialTable(ok, ok, ok, np.array([[np.inf, 0.0], [0.0, 1.0]]))


def test_material_pair_lookup():
    t = MaterialTable.uniform(1.0, 2.0, 0.5, 0.3)
    pair = t.pair(0, 0)
    assert pair.spring_tangential == 1.0 and pair.spring_normal == 2.0
    assert pair.restitution == 0.5 and pair.friction == 0.3


def test_wall_normal_must_be_unit():
    Wall((0, 0, 0), (0, 0, 1))
    with pytest.raises(ValueError):
        Wall((0, 0, 0), (0, 0, 1.001))


def test_bounded_wall_needs_axis_aligned_normal():
    s = 1 / math.sqrt(2)
    with pytest.raises(ValueError):
        Wall((0, 0, 0), (s, s, 0), patch_min=(0, 0, 0), patch_max=(1, 1, 1))
    w = Wall((0, 0, 2), (0, 0, 1), patch_min=(0, 0, 0), patch_max=(1, 1, 1))
    # bounds along the normal are meaningless and dropped
    assert w.patch_min[2] == -math.inf and w.patch_max[2] == math.inf
    assert w.bounded


def test_pack_walls_shapes():
    pw = pack_walls([Wall((0, 0, 0), (0, 0, 1)), Wall((1, 0, 0), (-1, 0, 0), two_sided=True)])
    assert pw.point.shape == (2, 3) and pw.two_sided.tolist() == [False, True]
    empty = pack_walls([])
    assert empty.point.shape == (0, 3)


def test_sim_config_grid_dims():
    cfg = SimConfig(dt=1e-3, domain_min=(0, 0, 0), domain_max=(1.0, 0.5, 0.35), cell_edge=0.1)
    assert cfg.grid_dims.tolist() == [10, 5, 3]
    assert cfg.n_cells == 150


@pytest.mark.parametrize("kw", [
    dict(dt=0.0),
    dict(domain_max=(1.0, 1.0, 0.2)),   # only two cells along z
    dict(cell_edge=(0.1, -0.1, 0.1)),
])
def test_sim_config_invalid(kw):
    base = dict(dt=1e-3, domain_min=(0, 0, 0), domain_max=(1, 1, 1), cell_edge=0.1)
    base.update(kw)
    with pytest.raises(ValueError):
        SimConfig(**base)


def test_solid_sphere_inertia():
    assert solid_sphere_inertia(1.0, 1.0) == pytest.approx(0.4)
