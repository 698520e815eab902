import io
import itertools

import numpy as np
import pytest

from eern.oracle import (LegalPerm, SizeGuardError, apply_perm, block_distinct_counts, class_matrix,
                         commutation_defect, commutes, flat_perm_matrix, swap_witness, is_legal,
                         materialize_bias, materialize_W, perm_matrix, random_illegal_perm, read_pgm,
                         recursive_block, recursive_block_for, same_pattern, write_pgm)
from eern.relstore import RelInstance
from eern.schema import make_schema
from eern.tying import TiedWeights, class_map, num_free_params


def test_materialize_shape_and_blocks(example):
    W = materialize_W(TiedWeights.random(example, rng=0))
    assert W.matrix.shape == (51, 51)
    assert W.block(0, 1).shape == (20, 16)
    assert len(np.unique(W.block(0, 1))) == 5
    assert not materialize_W(TiedWeights.zeros(example)).matrix.any()


def test_perm_matrix_identity_and_locality(example):
    assert np.array_equal(perm_matrix(LegalPerm.identity(example), example), np.eye(51))
    G = perm_matrix(LegalPerm.swap(example, 2, 0, 1), example)
    # refs (student, prof) has no course axis, so its block is untouched
    assert np.array_equal(G[36:, 36:], np.eye(15))
    assert not np.array_equal(G[:20, :20], np.eye(20))
    assert not np.array_equal(G[20:36, 20:36], np.eye(16))


def test_perm_matrix_homomorphism(example):
    rng = np.random.default_rng(0)
    for _ in range(5):
        p, q = LegalPerm.random(example, rng), LegalPerm.random(example, rng)
        assert np.array_equal(perm_matrix(p @ q, example), perm_matrix(p, example) @ perm_matrix(q, example))
        assert np.array_equal(perm_matrix(p.inverse(), example), perm_matrix(p, example).T)


def test_apply_perm(example):
    rng = np.random.default_rng(1)
    x = RelInstance.from_dense(example, [rng.normal(size=example.shape(i)) for i in range(3)])
    same = apply_perm(LegalPerm.identity(example), x)
    assert all(np.array_equal(a, b) for a, b in zip(same.values, x.values))
    p = LegalPerm.swap(example, 1, 0, 3)
    twice = apply_perm(p, apply_perm(p, x))
    assert all(np.array_equal(a, b) for a, b in zip(twice.values, x.values))


def test_legal_commute_exact_integer(example):
    W = materialize_W(TiedWeights.random(example, rng=2, integer=True))
    rng = np.random.default_rng(2)
    for _ in range(100):
        assert commutes(W, perm_matrix(LegalPerm.random(example, rng), example))


def test_identity_commutes_with_anything(example):
    rng = np.random.default_rng(5)
    assert commutes(np.eye(51), flat_perm_matrix(rng.permutation(51)))


def test_is_legal(example):
    rng = np.random.default_rng(3)
    for _ in range(10):
        G = perm_matrix(LegalPerm.random(example, rng), example)
        pi = np.argmax(G, axis=0)  # image of each position
        assert is_legal(pi, example)
    assert not is_legal(random_illegal_perm(example, rng), example)
    assert not is_legal(swap_witness(example), example)


def test_illegal_permutations_break_commutation(example):
    rng = np.random.default_rng(4)
    W = materialize_W(TiedWeights.random(example, rng=rng))
    hits = sum(commutation_defect(W, flat_perm_matrix(random_illegal_perm(example, rng))) > 1e-6
               for _ in range(10))
    assert hits >= 9
    assert not commutes(W, flat_perm_matrix(swap_witness(example)), atol=1e-6)


def test_witness_on_set_only_schema():
    s = make_schema([3, 2], [[1, 2], [2]])
    pi = swap_witness(s)
    assert not is_legal(pi, s)


def test_bias_pattern(example):
    w = TiedWeights.random(example, rng=6)
    b = materialize_bias(w)
    assert len(np.unique(b[:20])) == 1 and len(np.unique(b[36:])) == 1
    seg = b[20:36].reshape(4, 4)
    assert len(np.unique(seg)) == 2
    assert len(set(np.diag(seg))) == 1
    rng = np.random.default_rng(6)
    for _ in range(50):
        assert np.array_equal(perm_matrix(LegalPerm.random(example, rng), example) @ b, b)
    assert not np.array_equal(flat_perm_matrix(swap_witness(example)) @ b, b)


def test_recursive_block_base_cases():
    assert recursive_block([], np.array(3.0)).tolist() == [[3.0]]
    w, v = 0.5, 2.0
    got = recursive_block([4], np.array([w, v]))
    assert np.allclose(got, w * np.ones((4, 4)) + v * np.eye(4))


def _set_schemas():
    for k in (1, 2, 3):
        for sizes in itertools.product(range(1, 5), repeat=k):
            yield make_schema(list(sizes), [list(range(1, k + 1))])


def test_recursive_block_matches_tying():
    rng = np.random.default_rng(7)
    n = 0
    for s in _set_schemas():
        k = len(s.relations[0].members)
        params = rng.normal(size=(2,) * k)
        rb = recursive_block_for(s, s.relations[0].members, params)
        assert same_pattern(rb, class_map(s, 0, 0))
        n += 1
    assert n == 4 + 16 + 64


def test_size_guard():
    s = make_schema([70, 70], [[1, 2]])
    with pytest.raises(SizeGuardError):
        class_matrix(s)


def test_pgm_round_trip(example):
    cm = class_matrix(example)
    buf = io.StringIO()
    write_pgm(cm, buf)
    back = read_pgm(io.StringIO(buf.getvalue()))
    assert np.array_equal(back, cm)
    counts = block_distinct_counts(back, example)
    assert counts == {(i, j): num_free_params(example, i, j) for i in range(3) for j in range(3)}
    with pytest.raises(ValueError):
        read_pgm(io.StringIO("P5\n1 1\n1\n0\n"))
    one = make_schema([3], [[1]])
    assert len(np.unique(class_matrix(one))) == 2
