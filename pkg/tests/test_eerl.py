import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eern.checks import gradient_check
from eern.eerl import (Activation, backward, backward_arrays, broadcast, build_plan, forward, forward_arrays,
                       forward_dense_oracle, pool, pool_coefficients, weights_from_coefficients)
from eern.oracle import LegalPerm, apply_perm
from eern.relstore import RelInstance
from eern.schema import make_schema
from eern.synthgen import synth_schema
from eern.tying import TiedWeights, bias_class_map, class_map

LEAKY = Activation("leaky_relu", 0.01)


def random_set_schema(rng, max_n=6):
    D = int(rng.integers(1, 4))
    counts = [int(c) for c in rng.integers(1, max_n + 1, size=D)]
    rels = []
    for _ in range(int(rng.integers(1, 4))):
        k = int(rng.integers(1, D + 1))
        rels.append([int(d) + 1 for d in rng.permutation(D)[:k]])
    return make_schema(counts, rels)


def random_instance(rng, s, k=1, p=1.0):
    vals = [rng.normal(size=s.shape(i) + (k,)) for i in range(s.n_relations)]
    masks = [rng.uniform(size=s.shape(i)) < p for i in range(s.n_relations)]
    return RelInstance.from_dense(s, vals, masks)


def test_pool_examples():
    x = np.ones((2, 3, 1))
    assert pool(x, (1, 2), {1, 2}).item() == 6
    assert np.array_equal(pool(x, (1, 2), set()), x)
    rng = np.random.default_rng(0)
    y = rng.normal(size=(3, 4, 5, 2))
    two_step = pool(pool(y, (1, 2, 3), {1}), (2, 3), {2})
    assert np.allclose(two_step, pool(y, (1, 2, 3), {1, 2}))


def test_pool_mean_counts_observed_only():
    x = np.array([[1.0, 3.0], [5.0, 7.0]])[..., None]
    m = np.array([[True, False], [False, False]])
    out = pool(x, (1, 2), {2}, "observed-mean", m)[..., 0]
    assert out.tolist() == [1.0, 0.0]  # empty row gives 0, not nan
    with pytest.raises(ValueError):
        pool(x, (1, 2), {2}, "mean")
    with pytest.raises(ValueError):
        pool(x, (1, 2), {2}, "median", m)


def test_broadcast_and_adjoint():
    c = broadcast(np.array([2.0]), [], (1, 2), (3, 4))
    assert c.shape == (3, 4, 1) and (c == 2).all()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4, 5))
    assert np.array_equal(broadcast(pool(x, (1, 2, 3), set()), [1, 2, 3], (1, 2, 3), (3, 4, 5)), x)
    for S, kept in (({2}, [1, 3]), ({1, 3}, [2]), ({1, 2, 3}, [])):
        y = rng.normal(size=pool(x, (1, 2, 3), S).shape)
        lhs = (broadcast(y, kept, (1, 2, 3), (3, 4, 5)) * x).sum()
        assert np.isclose(lhs, (y * pool(x, (1, 2, 3), S)).sum())


def test_pool_rejects_repeats():
    with pytest.raises(ValueError):
        pool(np.ones((2, 2)), (1, 1), {1})


@pytest.mark.parametrize("seed", range(20))
def test_forward_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    s = random_set_schema(rng)
    k_in, k_out = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    w = TiedWeights.random(s, k_in, k_out, rng=rng)
    x = random_instance(rng, s, k_in, p=0.7)
    for act in (Activation(), LEAKY):
        a, b = forward(x, w, act).values, forward_dense_oracle(x, w, act).values
        assert max(float(np.abs(u - v).max()) for u, v in zip(a, b)) <= 1e-9


def test_zero_weights_zero_output():
    s = synth_schema((3, 4, 2))
    x = random_instance(np.random.default_rng(0), s)
    assert all(not v.any() for v in forward(x, TiedWeights.zeros(s)).values)


def test_set_layer_special_case():
    s = make_schema([5], [[1]])
    w = TiedWeights.zeros(s)
    w.blocks[0, 0][class_map(s, 0, 0)[0, 0], 0, 0] = 2.0  # diagonal (identity) class
    w.blocks[0, 0][class_map(s, 0, 0)[0, 1], 0, 0] = 0.5  # off-diagonal class
    x = np.arange(5.0)
    y = forward(RelInstance.from_dense(s, [x]), w).values[0][:, 0]
    # off-diagonal weight w, diagonal w + v  ->  v x + w sum(x)
    assert np.allclose(y, 1.5 * x + 0.5 * x.sum())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_equivariance(seed):
    rng = np.random.default_rng(seed)
    s = random_set_schema(rng)
    w = TiedWeights.random(s, rng=rng)
    x = random_instance(rng, s)
    p = LegalPerm.random(s, rng)
    a = forward(apply_perm(p, x), w).values
    b = apply_perm(p, forward(x, w)).values
    assert max(float(np.abs(u - v).max()) for u, v in zip(a, b)) <= 1e-9


def test_stack_equivariance():
    rng = np.random.default_rng(2)
    s = synth_schema((4, 3, 5))
    layers = [TiedWeights.random(s, 1, 3, rng=rng), TiedWeights.random(s, 3, 3, rng=rng),
              TiedWeights.random(s, 3, 1, rng=rng)]

    def run(x):
        for w in layers:
            x = forward(x, w, LEAKY)
        return x

    x = random_instance(rng, s)
    for _ in range(5):
        p = LegalPerm.random(s, rng)
        a, b = run(apply_perm(p, x)).values, apply_perm(p, run(x)).values
        assert max(float(np.abs(u - v).max()) for u, v in zip(a, b)) <= 1e-9


def test_channel_independence():
    rng = np.random.default_rng(3)
    s = synth_schema((3, 4, 2))
    w1, w2 = TiedWeights.random(s, rng=rng), TiedWeights.random(s, rng=rng)
    w = TiedWeights.zeros(s, 2, 2)
    for key in w.blocks:
        w.blocks[key][:, 0, 0] = w1.blocks[key][:, 0, 0]
        w.blocks[key][:, 1, 1] = w2.blocks[key][:, 0, 0]
    for i in range(s.n_relations):
        w.biases[i][:, 0], w.biases[i][:, 1] = w1.biases[i][:, 0], w2.biases[i][:, 0]
    x = random_instance(rng, s, 2)
    y = forward(x, w, LEAKY).values
    xa = RelInstance(s, [v[..., :1] for v in x.values], x.masks)
    xb = RelInstance(s, [v[..., 1:] for v in x.values], x.masks)
    ya, yb = forward(xa, w1, LEAKY).values, forward(xb, w2, LEAKY).values
    for i in range(s.n_relations):
        assert np.allclose(y[i][..., 0], ya[i][..., 0]) and np.allclose(y[i][..., 1], yb[i][..., 0])


def test_gradient_check_suite():
    r = gradient_check(synth_schema((3, 4, 2)), seed=0)
    assert r.passed, r.detail


def test_zero_upstream_and_bias_gradient():
    rng = np.random.default_rng(4)
    s = synth_schema((3, 4, 2))
    w = TiedWeights.random(s, rng=rng)
    x = random_instance(rng, s)
    gw, gx = backward(x, w, [np.zeros(s.shape(i) + (1,)) for i in range(3)])
    assert not gw.to_vector().any() and all(not g.any() for g in gx)
    up = [rng.normal(size=s.shape(i) + (1,)) for i in range(3)]
    gw, _ = backward(x, w, up)
    for i in range(3):
        cls = bias_class_map(s, i)
        for c in range(gw.biases[i].shape[0]):
            assert np.isclose(gw.biases[i][c, 0], up[i][..., 0][cls == c].sum())


def test_class_basis_round_trip():
    rng = np.random.default_rng(5)
    s = synth_schema((3, 4, 2))
    w = TiedWeights.random(s, 2, 3, rng=rng)
    back = weights_from_coefficients(s, pool_coefficients(w), w.biases)
    assert np.allclose(back.to_vector(), w.to_vector())


def test_multiset_only_through_oracle(example):
    rng = np.random.default_rng(6)
    w = TiedWeights.random(example, rng=rng)
    x = random_instance(rng, example)
    with pytest.raises(ValueError):
        forward(x, w)
    y = forward_dense_oracle(x, w)
    assert y.values[1].shape == (4, 4, 1)
    # identity weights (diagonal class of every self block) give x + bias
    wi = TiedWeights.zeros(example)
    for i in range(3):
        diag = class_map(example, i, i)
        wi.blocks[i, i][np.unique(np.diag(diag)), 0, 0] = 1.0
    out = forward_dense_oracle(x, wi).values
    assert all(np.allclose(o, v) for o, v in zip(out, x.masked()))


def test_mean_mode_uses_counts():
    rng = np.random.default_rng(7)
    s = make_schema([3, 4], [[1, 2]])
    w = TiedWeights.random(s, rng=rng)
    x = random_instance(rng, s, p=0.5)
    plan = build_plan(s)
    coefs = pool_coefficients(w)
    ys, cache = forward_arrays(x.values, x.masks, coefs, w.biases, Activation(), "mean", plan)
    # doubling every observed value doubles the mean-pooled terms and the identity term
    ys2, _ = forward_arrays([2 * v for v in x.values], x.masks, coefs, [0 * b for b in w.biases],
                            Activation(), "mean", plan)
    ys0, _ = forward_arrays(x.values, x.masks, coefs, [0 * b for b in w.biases], Activation(), "mean", plan)
    assert np.allclose(ys2[0], 2 * ys0[0])
    g = backward_arrays(cache, [np.ones_like(ys[0])], coefs, plan)[2][0]
    assert not g[~x.masks[0]].any()
