import itertools

import pytest
from hypothesis import given, strategies as st

from eern.partitions import bell, enumerate_partitions, is_rgs, partition_index, partition_of

# Bell numbers, OEIS A000110
BELL = [1, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975]


def test_bell_values():
    assert [bell(n) for n in range(len(BELL))] == BELL
    assert bell(3) == 5 and bell(4) == 15


def test_bell_limits():
    with pytest.raises(ValueError):
        bell(-1)
    with pytest.raises(OverflowError):
        bell(21)
    assert bell(20) == 51724158235372


def test_enumerate_small():
    assert enumerate_partitions(1) == ((0,),)
    assert enumerate_partitions(2) == ((0, 0), (0, 1))
    assert len(enumerate_partitions(3)) == 5


@pytest.mark.parametrize("n", range(1, 11))
def test_enumeration_count_and_order(n):
    parts = enumerate_partitions(n)
    assert len(parts) == bell(n)
    assert list(parts) == sorted(parts)
    assert all(is_rgs(p) for p in parts)


def test_enumeration_matches_brute_force():
    # every labelling of 5 positions with values < 5, reduced to its pattern
    seen = {partition_of(t) for t in itertools.product(range(5), repeat=5)}
    assert seen == set(enumerate_partitions(5))


def test_partition_of_examples():
    assert partition_of((4, 4, 5)) == (0, 0, 1) == partition_of((3, 3, 2))
    assert partition_of((7,)) == (0,)
    assert partition_of((1, 2, 1, 3)) == (0, 1, 0, 2)
    with pytest.raises(ValueError):
        partition_of(())


def test_partition_index_bijection():
    assert partition_index((0, 0)) == 0 and partition_index((0, 1)) == 1
    for n in range(1, 7):
        assert [partition_index(p) for p in enumerate_partitions(n)] == list(range(bell(n)))


@given(st.lists(st.integers(0, 6), min_size=1, max_size=8), st.permutations(range(7)))
def test_partition_of_invariant_under_relabeling(t, sigma):
    assert partition_of(t) == partition_of([sigma[v] for v in t])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=7))
def test_partition_of_is_rgs_and_ranked(t):
    p = partition_of(t)
    assert is_rgs(p)
    assert enumerate_partitions(len(p))[partition_index(p)] == p


def test_is_rgs_rejects():
    assert not is_rgs(())
    assert not is_rgs((1, 0))
    assert not is_rgs((0, 2))
