"""Factorized auto-encoder for missing-record prediction.

encoder EERLs -> per-entity codes (observed-mean over every cell that
indexes the instance) -> codes broadcast into each relation and
concatenated as channels -> decoder EERLs -> one output channel.

The loss is the mean squared error on the observed training entries of the
target relation(s).  All weights are size independent, so a fitted model
runs unchanged on another instantiation of the same schema.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from typing import Sequence, TextIO

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._util import Adam, DivergenceError, rmse, stream
from .eerl import Activation, backward_arrays, build_plan, forward_arrays, weights_from_coefficients
from .relstore import RelInstance
from .schema import Schema, parse_schema
from .tying import read_weights, subset_basis, write_weights

log = logging.getLogger(__name__)


def _check_instance(X) -> RelInstance:
    if not isinstance(X, RelInstance):
        raise TypeError(f"expected a RelInstance, got {type(X).__name__}")
    if X.channels != 1:
        raise ValueError(f"the auto-encoder reads single-channel data, got {X.channels} channels")
    build_plan(X.schema)  # rejects multiset relations
    return X


def _init_layer(schema: Schema, k_in: int, k_out: int, rng: np.random.Generator):
    R = range(schema.n_relations)
    coefs = {}
    for i in R:
        n_terms = sum(len(subset_basis(schema, i, j).ordinals) for j in R)
        bound = np.sqrt(6.0 / (k_in * n_terms))
        for j in R:
            n = len(subset_basis(schema, i, j).ordinals)
            coefs[i, j] = rng.uniform(-bound, bound, size=(n, k_in, k_out))
    biases = [np.zeros((1, k_out)) for _ in R]
    return {"coefs": coefs, "biases": biases}


class FactorizedAutoencoder(BaseEstimator):
    """EERL encoder/decoder trained on observed entries of ``target``.

    ``encoder_widths``/``decoder_widths`` are the hidden widths; a linear
    EERL maps to ``code_dim`` channels before entity pooling and another maps
    the decoder to one output channel.  ``dropout`` zeroes whole channels of
    hidden layers during training (off by default).  ``input_mask`` hides
    that fraction of observed entries from the encoder each epoch while the
    loss still scores them, so codes cannot rely on the exact observed set.
    """

    def __init__(self, target=0, encoder_widths=(16, 16, 16), code_dim: int = 10,
                 decoder_widths=(16, 16, 16), leak: float = 0.01, pool: str = "mean",
                 lr: float = 3e-3, epochs: int = 1500, dropout: float = 0.0,
                 input_mask: float = 0.0, seed: int = 0, verbose: int = 0):
        self.target = target
        self.encoder_widths = encoder_widths
        self.code_dim = code_dim
        self.decoder_widths = decoder_widths
        self.leak = leak
        self.pool = pool
        self.lr = lr
        self.epochs = epochs
        self.dropout = dropout
        self.input_mask = input_mask
        self.seed = seed
        self.verbose = verbose

    # -- structure ---------------------------------------------------------
    def _targets(self, schema: Schema) -> tuple[int, ...]:
        t = self.target
        t = t if isinstance(t, (tuple, list)) else (t,)
        return tuple(schema.relation_index(k) for k in t)

    def _dec_channels(self, schema: Schema) -> int:
        return max(len(r.members) for r in schema.relations) * self.code_dim

    def _validate_params(self):
        widths = tuple(self.encoder_widths) + tuple(self.decoder_widths)
        if any(int(w) < 1 for w in widths) or self.code_dim < 1:
            raise ValueError("layer widths and code_dim must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.input_mask < 1.0:
            raise ValueError("input_mask must be in [0, 1)")
        if self.pool not in ("sum", "mean"):
            raise ValueError("pool must be 'sum' or 'mean'")

    def _init(self, schema: Schema):
        rng = stream(self.seed, "init")
        enc = [1] + [int(w) for w in self.encoder_widths] + [self.code_dim]
        dec = [self._dec_channels(schema)] + [int(w) for w in self.decoder_widths] + [1]
        self.encoder_ = [_init_layer(schema, a, b, rng) for a, b in zip(enc[:-1], enc[1:])]
        self.decoder_ = [_init_layer(schema, a, b, rng) for a, b in zip(dec[:-1], dec[1:])]
        self.schema_ = schema

    def _acts(self, layers):
        hidden = Activation("leaky_relu", self.leak)
        return [hidden] * (len(layers) - 1) + [Activation("identity")]

    def _params(self):
        out = []
        for layer in self.encoder_ + self.decoder_:
            R = range(self.schema_.n_relations)
            out += [layer["coefs"][i, j] for i in R for j in R] + layer["biases"]
        return out

    def _check_fitted(self):
        if not hasattr(self, "encoder_"):
            raise NotFittedError("FactorizedAutoencoder is not fitted yet")

    def _compatible(self, X: RelInstance):
        if X.schema.structure_hash() != self.schema_.structure_hash():
            raise ValueError("instance schema differs from the training schema")

    # -- forward pieces ----------------------------------------------------
    def _run(self, layers, h, masks, plan, drops):
        caches = []
        for k, (layer, act) in enumerate(zip(layers, self._acts(layers))):
            h, c = forward_arrays(h, masks, layer["coefs"], layer["biases"], act, self.pool, plan)
            caches.append(c)
            if drops is not None and k < len(layers) - 1:
                h = [v * dk for v, dk in zip(h, drops[k])]
        return h, caches

    def _back(self, layers, caches, g, plan, drops, need_input=True):
        grads = []
        for k in reversed(range(len(layers))):
            if drops is not None and k < len(layers) - 1:
                g = [v * dk for v, dk in zip(g, drops[k])]
            gc, gb, g = backward_arrays(caches[k], g, layers[k]["coefs"], plan, need_input=need_input or k > 0)
            grads.append((gc, gb))
        return grads[::-1], g

    def _sample_drops(self, layers, rng):
        """Channel-wise dropout factors for every hidden layer and relation."""
        if self.dropout <= 0 or rng is None:
            return None
        keep = 1.0 - self.dropout
        n_rel = self.schema_.n_relations
        return [[(rng.uniform(size=layer["biases"][0].shape[-1]) < keep) / keep for _ in range(n_rel)]
                for layer in layers[:-1]]

    def _encode(self, X: RelInstance, drops=None):
        s = X.schema
        h, caches = self._run(self.encoder_, X.masked(), X.masks, build_plan(s), drops)
        totals = {d: np.zeros((n, self.code_dim)) for d, n in s.sizes.items()}
        counts = {d: np.zeros(n) for d, n in s.sizes.items()}
        for rel, hi, m in zip(s.relations, h, X.masks):
            hm = hi * m[..., None]
            for a, d in enumerate(rel.members):
                other = tuple(b for b in range(len(rel.members)) if b != a)
                totals[d] += hm.sum(axis=other)
                counts[d] += m.sum(axis=other)
        codes = {d: np.divide(totals[d], counts[d][:, None], out=np.zeros_like(totals[d]),
                              where=counts[d][:, None] > 0) for d in totals}
        return codes, (h, caches, counts)

    def _decoder_input(self, s: Schema, codes: dict) -> list[np.ndarray]:
        C, hc = self._dec_channels(s), self.code_dim
        out = []
        for i, rel in enumerate(s.relations):
            shape = s.shape(i)
            x = np.zeros(shape + (C,))
            for a, d in enumerate(rel.members):
                expand = [1] * len(shape)
                expand[a] = shape[a]
                x[..., a * hc:(a + 1) * hc] = codes[d].reshape(expand + [hc])
            out.append(x)
        return out

    def _decode(self, s: Schema, codes: dict, drops=None):
        full = [np.ones(s.shape(i), dtype=bool) for i in range(s.n_relations)]
        h, caches = self._run(self.decoder_, self._decoder_input(s, codes), full, build_plan(s), drops)
        return [v[..., 0] for v in h], caches

    def _loss_and_grads(self, X: RelInstance, targets: Sequence[int], rng=None, hide_rng=None):
        s = X.schema
        plan = build_plan(s)
        enc_drops = self._sample_drops(self.encoder_, rng)
        dec_drops = self._sample_drops(self.decoder_, rng)
        # hide some observed inputs from the encoder; the loss still covers them
        Xin = X if hide_rng is None else X.with_masks(
            [m & (hide_rng.uniform(size=m.shape) >= self.input_mask) for m in X.masks])
        codes, (h_enc, enc_caches, counts) = self._encode(Xin, enc_drops)
        preds, dec_caches = self._decode(s, codes, dec_drops)
        n = sum(int(X.masks[t].sum()) for t in targets)
        loss = 0.0
        g_out = [np.zeros(s.shape(i) + (1,)) for i in range(s.n_relations)]
        for t in targets:
            r = (preds[t] - X.values[t][..., 0]) * X.masks[t]
            loss += float((r * r).sum()) / n
            g_out[t][..., 0] = 2.0 * r / n
        grads_dec, g = self._back(self.decoder_, dec_caches, g_out, plan, dec_drops)
        # adjoint of the decoder input construction
        hc = self.code_dim
        g_codes = {d: np.zeros((n_d, hc)) for d, n_d in s.sizes.items()}
        for rel, gi in zip(s.relations, g):
            for a, d in enumerate(rel.members):
                other = tuple(b for b in range(len(rel.members)) if b != a)
                g_codes[d] += gi[..., a * hc:(a + 1) * hc].sum(axis=other)
        # adjoint of the entity mean-pooling
        g = []
        for i, rel in enumerate(s.relations):
            shape = s.shape(i)
            gi = np.zeros(shape + (hc,))
            for a, d in enumerate(rel.members):
                scaled = np.divide(g_codes[d], counts[d][:, None], out=np.zeros_like(g_codes[d]),
                                   where=counts[d][:, None] > 0)
                expand = [1] * len(shape)
                expand[a] = shape[a]
                gi = gi + scaled.reshape(expand + [hc])
            g.append(gi * Xin.masks[i][..., None])
        grads_enc, _ = self._back(self.encoder_, enc_caches, g, plan, enc_drops, need_input=False)
        flat = []
        R = range(s.n_relations)
        for gc, gb in grads_enc + grads_dec:
            flat += [gc[i, j] for i in R for j in R] + list(gb)
        return loss, flat

    # -- estimator API -----------------------------------------------------
    def fit(self, X: RelInstance, y=None, val_masks=None):
        """Train on the observed entries of ``X`` (its masks).

        ``val_masks`` optionally gives held-out cells of the target relation
        whose RMSE is logged alongside the training loss.
        """
        X = _check_instance(X)
        self._validate_params()
        self._init(X.schema)
        targets = self._targets(X.schema)
        if val_masks is not None:
            for t in targets:
                if (np.asarray(val_masks[t]) & X.masks[t]).any():
                    raise ValueError("validation mask overlaps the training mask")
        opt = Adam(self._params(), self.lr)
        drop_rng = stream(self.seed, "dropout") if self.dropout > 0 else None
        hide_rng = stream(self.seed, "input-mask") if self.input_mask > 0 else None
        self.history_ = []
        self.val_history_ = []
        every = max(1, self.epochs // 20)
        for epoch in range(self.epochs):
            loss, grads = self._loss_and_grads(X, targets, drop_rng, hide_rng)
            if not np.isfinite(loss):
                raise DivergenceError("auto-encoder", epoch, self.history_)
            self.history_.append(loss)
            opt.step(grads)
            if val_masks is not None and (epoch % every == 0 or epoch == self.epochs - 1):
                self.val_history_.append((epoch, self.rmse(X, val_masks[targets[0]])))
            if self.verbose and epoch % every == 0:
                log.info("epoch %d loss %.5f", epoch, loss)
        return self

    def encode(self, X: RelInstance) -> dict:
        """Per-entity code matrices ``{entity id: (N_d, code_dim)}``."""
        self._check_fitted()
        X = _check_instance(X)
        self._compatible(X)
        return self._encode(X)[0]

    def decode(self, codes: dict, schema: Schema | None = None) -> list[np.ndarray]:
        """Dense predictions for every relation from entity codes."""
        self._check_fitted()
        return self._decode(schema or self.schema_, codes)[0]

    def predict(self, X: RelInstance) -> np.ndarray:
        """Dense prediction of the (first) target relation from observed ``X``."""
        codes = self.encode(X)
        return self._decode(X.schema, codes)[0][self._targets(X.schema)[0]]

    def rmse(self, X: RelInstance, test_mask: np.ndarray) -> float:
        """Test RMSE; ``X`` must observe only training cells but hold true values under ``test_mask``."""
        t = self._targets(X.schema)[0]
        return rmse(self.predict(X), X.values[t][..., 0], test_mask)

    def score(self, X: RelInstance, test_mask: np.ndarray) -> float:
        return -self.rmse(X, test_mask)

    # -- persistence -------------------------------------------------------
    def layer_weights(self):
        """All layers as class-basis :class:`TiedWeights` (encoder first)."""
        self._check_fitted()
        return [weights_from_coefficients(self.schema_, l["coefs"], l["biases"])
                for l in self.encoder_ + self.decoder_]

    def save(self, path: str) -> None:
        self._check_fitted()
        os.makedirs(path, exist_ok=True)
        cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()}
        meta = {"config": cfg, "schema": self.schema_.render(),
                "n_encoder": len(self.encoder_), "n_decoder": len(self.decoder_)}
        with open(os.path.join(path, "config.json"), "w") as fh:
            json.dump(meta, fh, indent=2)
        for k, w in enumerate(self.layer_weights()):
            with open(os.path.join(path, f"layer_{k:02d}.txt"), "w") as fh:
                write_weights(w, fh)

    @classmethod
    def load(cls, path: str) -> "FactorizedAutoencoder":
        from .eerl import pool_coefficients

        with open(os.path.join(path, "config.json")) as fh:
            meta = json.load(fh)
        cfg = meta["config"]
        for k in ("encoder_widths", "decoder_widths", "target"):
            if isinstance(cfg.get(k), list):
                cfg[k] = tuple(cfg[k])
        m = cls(**cfg)
        schema = parse_schema(meta["schema"])
        layers = []
        for k in range(meta["n_encoder"] + meta["n_decoder"]):
            with open(os.path.join(path, f"layer_{k:02d}.txt")) as fh:
                w = read_weights(fh, schema)
            layers.append({"coefs": pool_coefficients(w), "biases": w.biases})
        m.encoder_ = layers[:meta["n_encoder"]]
        m.decoder_ = layers[meta["n_encoder"]:]
        m.schema_ = schema
        return m


# -- functional surface -----------------------------------------------------
def train(cfg: dict, x: RelInstance, train_masks, val_masks=None):
    """Fit a model on ``x`` restricted to ``train_masks``; returns (model, history)."""
    for t, v in zip(train_masks, val_masks or []):
        if (np.asarray(t) & np.asarray(v)).any():
            raise ValueError("train and validation masks overlap")
    m = FactorizedAutoencoder(**cfg).fit(x.with_masks(train_masks), val_masks=val_masks)
    return m, m.history_


def encode(m: FactorizedAutoencoder, x: RelInstance) -> dict:
    return m.encode(x)


def decode(m: FactorizedAutoencoder, z: dict, target_mask=None, schema: Schema | None = None):
    """Predictions of the target relation; values at ``target_mask`` if given."""
    pred = m.decode(z, schema)[m._targets(schema or m.schema_)[0]]
    return pred if target_mask is None else pred[np.asarray(target_mask, dtype=bool)]


def evaluate(m: FactorizedAutoencoder, x: RelInstance, test_mask) -> float:
    """Test RMSE; ``x.masks`` are the inputs, ``x.values`` hold the truth."""
    return m.rmse(x, test_mask)


def dump_codes(m: FactorizedAutoencoder, x: RelInstance, fh: TextIO) -> None:
    codes = m.encode(x)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["entity", "instance"] + [f"c{k + 1}" for k in range(m.code_dim)])
    for d, Z in codes.items():
        name = x.schema.entities[d - 1].name
        for n, row in enumerate(Z):
            w.writerow([name, n + 1] + [repr(float(v)) for v in row])


def read_codes(fh: TextIO, schema: Schema) -> dict:
    rows = list(csv.reader(fh))[1:]
    out: dict = {}
    for row in rows:
        d = schema.entity(row[0]).id
        out.setdefault(d, []).append([float(v) for v in row[2:]])
    return {d: np.array(v) for d, v in out.items()}
