import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ectfem.meshgen import generate_box_mesh
from ectfem.partition import partition_stats, partition_tets, parts_connected


def test_single_part(small_tube):
    pm = partition_tets(small_tube, 1)
    assert np.all(pm.part_of == 0)
    st_ = partition_stats(pm, small_tube)
    assert st_.imbalance == 1.0 and st_.edge_cut == 0


def test_singletons(cube6):
    pm = partition_tets(cube6, cube6.n_tets)
    assert sorted(pm.part_of.tolist()) == list(range(6))
    stats = partition_stats(pm, cube6)
    assert stats.edge_cut == int((cube6.topology().counts == 2).sum())


def test_invalid_part_count(cube6):
    with pytest.raises(ValueError):
        partition_tets(cube6, 0)


def test_cube_two_parts_brute_force(cube6):
    pm = partition_tets(cube6, 2, seed=7)
    sizes = np.bincount(pm.part_of, minlength=2)
    # exhaustive check: no assignment into 2 parts is better balanced than 3/3
    best = min(max(sum(a), 6 - sum(a)) for a in itertools.product((0, 1), repeat=6))
    assert sizes.max() == best == 3
    assert parts_connected(pm, cube6)


@pytest.mark.parametrize("P", [2, 4, 8])
def test_tube_balance_and_connectivity(small_tube, P):
    pm = partition_tets(small_tube, P, seed=0)
    stats = partition_stats(pm, small_tube)
    assert stats.imbalance <= 1.1
    assert (stats.sizes > 0).all()
    assert parts_connected(pm, small_tube)


def test_deterministic(small_tube):
    a = partition_tets(small_tube, 4, seed=3)
    b = partition_tets(small_tube, 4, seed=3)
    assert np.array_equal(a.part_of, b.part_of)


def test_footer_format(small_tube):
    stats = partition_stats(partition_tets(small_tube, 4), small_tube)
    line = stats.footer()
    assert line.startswith("# parts=4 imbalance=") and "cut=" in line


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 3), P=st.integers(1, 12), seed=st.integers(0, 10_000))
def test_partition_properties(n, P, seed):
    m = generate_box_mesh(n)
    pm = partition_tets(m, P, seed)
    assert pm.part_of.shape == (m.n_tets,)
    assert pm.part_of.min() >= 0 and pm.part_of.max() < P
    if P <= m.n_tets:
        assert len(np.unique(pm.part_of)) == P
    if P <= m.n_tets // 64:
        assert partition_stats(pm, m).imbalance <= 1.1
