import io

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from eern._util import rmse
from eern.model import FactorizedAutoencoder, decode, dump_codes, encode, evaluate, read_codes, train
from eern.oracle import LegalPerm, apply_perm, permute_array
from eern.relstore import RelInstance
from eern.schema import make_schema
from eern.synthgen import SynthConfig, generate, sparsify

SMALL = dict(encoder_widths=(6, 6), code_dim=3, decoder_widths=(6, 6))


@pytest.fixture(scope="module")
def data():
    cfg = SynthConfig(sizes=(8, 7, 6), min_per_line=2, seed=3)
    x, _ = generate(cfg)
    train_m, test_m = sparsify(x, cfg)
    return x, train_m, test_m


@pytest.fixture(scope="module")
def fitted(data):
    x, train_m, _ = data
    return FactorizedAutoencoder(epochs=60, seed=1, **SMALL).fit(x.with_masks(train_m))


def test_zero_epochs_and_zero_input(data):
    x, train_m, _ = data
    m = FactorizedAutoencoder(epochs=0, **SMALL).fit(x.with_masks(train_m))
    assert m.history_ == []
    zero = RelInstance.zeros(x.schema)
    codes = m.encode(zero)
    assert all(not z.any() for z in codes.values())
    assert all(np.isfinite(p).all() for p in m.decode(codes))


def test_code_shapes(fitted, data):
    x, train_m, _ = data
    codes = fitted.encode(x.with_masks(train_m))
    assert {d: z.shape for d, z in codes.items()} == {1: (8, 3), 2: (7, 3), 3: (6, 3)}


def test_encode_equivariance(fitted, data):
    x, train_m, _ = data
    xo = x.with_masks(train_m)
    rng = np.random.default_rng(0)
    for _ in range(3):
        p = LegalPerm.random(x.schema, rng)
        a = fitted.encode(apply_perm(p, xo))
        b = fitted.encode(xo)
        for d in a:
            assert np.allclose(a[d], b[d][np.argsort(p.perms[d])], atol=1e-12)


def test_end_to_end_equivariance(fitted, data):
    x, train_m, test_m = data
    xo = x.with_masks(train_m)
    rng = np.random.default_rng(1)
    base = fitted.rmse(xo, test_m[0])
    for _ in range(3):
        p = LegalPerm.random(x.schema, rng)
        xp = apply_perm(p, xo)
        pred = fitted.predict(xp)
        assert np.allclose(pred, permute_array(p, x.schema, 0, fitted.predict(xo)), atol=1e-10)
        assert abs(fitted.rmse(xp, permute_array(p, x.schema, 0, test_m[0])) - base) <= 1e-7


def test_rank_one_overfit():
    rng = np.random.default_rng(0)
    s = make_schema([10, 10], [[1, 2]])
    x = RelInstance.from_dense(s, [np.outer(rng.uniform(-1, 1, 10), rng.uniform(-1, 1, 10))])
    m = FactorizedAutoencoder(epochs=300, encoder_widths=(8, 8), decoder_widths=(8, 8), code_dim=4).fit(x)
    assert m.rmse(x, x.masks[0]) <= 0.05


def test_loss_decreases(data):
    x, train_m, _ = data
    m = FactorizedAutoencoder(epochs=300, **SMALL).fit(x.with_masks(train_m))
    assert m.history_[-1] * 10 <= m.history_[0]


@pytest.mark.parametrize("extra", [{}, dict(dropout=0.3, input_mask=0.3)])
def test_training_gradient_matches_finite_differences(data, extra):
    x, train_m, _ = data
    xt = x.with_masks(train_m)
    m = FactorizedAutoencoder(epochs=5, seed=2, leak=0.1, **SMALL, **extra).fit(xt)
    targets = m._targets(x.schema)

    def run():
        fresh = [np.random.default_rng(9), np.random.default_rng(10)] if extra else [None, None]
        return m._loss_and_grads(xt, targets, *fresh)

    _, grads = run()
    params = m._params()
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in rng.choice(len(params), size=12, replace=False):
        p = params[k]
        idx = tuple(rng.integers(n) for n in p.shape)
        old = p[idx]
        p[idx] = old + 1e-6
        up = run()[0]
        p[idx] = old - 1e-6
        dn = run()[0]
        p[idx] = old
        num = (up - dn) / 2e-6
        worst = max(worst, abs(grads[k][idx] - num) / max(abs(num), abs(grads[k][idx]), 1e-4))
    assert worst < 1e-5


def test_input_mask_keeps_data_untouched(data):
    x, train_m, _ = data
    xt = x.with_masks(train_m)
    before = [mk.copy() for mk in xt.masks]
    FactorizedAutoencoder(epochs=3, input_mask=0.5, seed=0, **SMALL).fit(xt)
    assert all(np.array_equal(a, b) for a, b in zip(before, xt.masks))


def test_seed_determinism(data):
    x, train_m, _ = data
    a = FactorizedAutoencoder(epochs=20, seed=5, dropout=0.2, **SMALL).fit(x.with_masks(train_m))
    b = FactorizedAutoencoder(epochs=20, seed=5, dropout=0.2, **SMALL).fit(x.with_masks(train_m))
    assert a.history_ == b.history_
    c = FactorizedAutoencoder(epochs=20, seed=6, **SMALL).fit(x.with_masks(train_m))
    assert c.history_ != a.history_


def test_evaluate_helpers(fitted, data):
    x, train_m, test_m = data
    xo = x.with_masks(train_m)
    pred = fitted.predict(xo)
    truth = x.values[0][..., 0]
    assert np.isclose(evaluate(fitted, xo, test_m[0]), np.sqrt(np.mean((pred - truth)[test_m[0]] ** 2)))
    assert rmse(truth, truth, test_m[0]) == 0.0
    centered = truth - truth.mean()
    full = np.ones_like(truth, dtype=bool)
    assert np.isclose(rmse(np.zeros_like(centered), centered, full), centered.std())
    assert fitted.score(xo, test_m[0]) == -fitted.rmse(xo, test_m[0])


def test_functional_surface(data):
    x, train_m, test_m = data
    val = [t for t in test_m]
    m, hist = train(dict(epochs=5, **SMALL), x, train_m, val)
    assert len(hist) == 5 and m.val_history_
    z = encode(m, x.with_masks(train_m))
    assert decode(m, z).shape == (8, 7)
    assert decode(m, z, test_m[0]).shape == (int(test_m[0].sum()),)
    with pytest.raises(ValueError):
        train(dict(epochs=1, **SMALL), x, train_m, train_m)


def test_dump_codes(fitted, data):
    x, train_m, _ = data
    buf = io.StringIO()
    dump_codes(fitted, x.with_masks(train_m), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "entity,instance,c1,c2,c3"
    assert len(lines) == 1 + 8 + 7 + 6
    back = read_codes(io.StringIO(buf.getvalue()), x.schema)
    codes = fitted.encode(x.with_masks(train_m))
    assert all(np.array_equal(back[d], codes[d]) for d in codes)
    again = io.StringIO()
    dump_codes(fitted, x.with_masks(train_m), again)
    assert again.getvalue() == buf.getvalue()


def test_save_load(tmp_path, fitted, data):
    x, train_m, _ = data
    fitted.save(str(tmp_path / "ckpt"))
    back = FactorizedAutoencoder.load(str(tmp_path / "ckpt"))
    xo = x.with_masks(train_m)
    assert np.allclose(back.predict(xo), fitted.predict(xo), atol=1e-12)
    assert back.get_params() == fitted.get_params()


def test_inductive_application(fitted):
    cfg = SynthConfig(sizes=(11, 9, 5), min_per_line=2, seed=9)
    x2, _ = generate(cfg)
    tr, _ = sparsify(x2, cfg)
    pred = fitted.predict(x2.with_masks(tr))
    assert pred.shape == (11, 9) and np.isfinite(pred).all()


def test_estimator_api_and_validation(data, fitted):
    x, train_m, _ = data
    m = FactorizedAutoencoder(code_dim=4)
    assert clone(m).get_params()["code_dim"] == 4
    with pytest.raises(NotFittedError):
        m.predict(x)
    for bad in (dict(code_dim=0), dict(lr=0.0), dict(dropout=1.0), dict(input_mask=1.0), dict(pool="max"),
                dict(encoder_widths=(0,))):
        with pytest.raises(ValueError):
            FactorizedAutoencoder(epochs=1, **bad).fit(x)
    with pytest.raises(TypeError):
        m.fit(np.zeros(3))
    other = make_schema([4, 4], [[1, 2]])
    with pytest.raises(ValueError):
        fitted.encode(RelInstance.zeros(other))


def test_multiset_schema_rejected(example):
    with pytest.raises(ValueError):
        FactorizedAutoencoder(epochs=1).fit(RelInstance.zeros(example))
