"""Numerical self-checks of a layer built for a given schema.

Each suite returns a :class:`CheckResult`; the CLI prints them and exits
non-zero when any fails.  ``break_tying`` perturbs one entry of the dense
weight matrix so that it no longer follows the tying pattern (a negative
control for the commutation suite).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eerl import Activation, backward, forward
from .oracle import (commutation_defect, flat_perm_matrix, forward_dense_oracle, swap_witness,
                     materialize_bias, materialize_W, perm_matrix, random_illegal_perm,
                     LegalPerm)
from .relstore import RelInstance
from .schema import Schema
from .tying import TiedWeights
from ._util import stream


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def set_subschema(schema: Schema) -> Schema | None:
    """The schema restricted to its relations without repeated entities."""
    rels = tuple(r for r in schema.relations if r.is_set)
    if not rels:
        return None
    from dataclasses import replace

    return Schema(schema.entities, tuple(replace(r, id=k) for k, r in enumerate(rels)))


def _dense_weights(schema: Schema, rng, break_tying: bool) -> np.ndarray:
    W = materialize_W(TiedWeights.random(schema, rng=rng)).matrix
    if break_tying:
        W = W.copy()
        W[0, 1] += 1.0 + rng.uniform()
    return W


def legal_commute(schema: Schema, trials: int = 100, seed: int = 0, tol: float = 1e-9,
                  break_tying: bool = False) -> CheckResult:
    rng = stream(seed, "legal-commute")
    W = _dense_weights(schema, rng, break_tying)
    worst = 0.0
    for _ in range(trials):
        G = perm_matrix(LegalPerm.random(schema, rng), schema)
        worst = max(worst, commutation_defect(W, G))
    return CheckResult("legal-commute", worst <= tol, f"max |WG-GW| = {worst:.3g} over {trials} permutations")


def layer_equivariance(schema: Schema, trials: int = 100, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """Dense-oracle layer output commutes with legal shuffles of the input."""
    rng = stream(seed, "layer-equivariance")
    w = TiedWeights.random(schema, rng=rng)
    act = Activation("leaky_relu")
    x = RelInstance.from_dense(schema, [rng.normal(size=schema.shape(i) + (1,)) for i in range(schema.n_relations)])
    y = np.concatenate([v.ravel() for v in forward_dense_oracle(x, w, act).values])
    xv = np.concatenate([v.ravel() for v in x.values])
    worst = 0.0
    for _ in range(trials):
        G = perm_matrix(LegalPerm.random(schema, rng), schema)
        xp = G @ xv
        parts, k = [], 0
        for i in range(schema.n_relations):
            n = schema.relation_size(i)
            parts.append(xp[k:k + n].reshape(schema.shape(i) + (1,)))
            k += n
        yp = np.concatenate([v.ravel() for v in forward_dense_oracle(RelInstance.from_dense(schema, parts), w, act).values])
        worst = max(worst, float(np.abs(yp - G @ y).max()))
    return CheckResult("layer-equivariance", worst <= tol, f"max |f(Gx)-Gf(x)| = {worst:.3g}")


def illegal_violate(schema: Schema, trials: int = 10, seed: int = 0, tol: float = 1e-6,
                    need: float = 0.9) -> CheckResult:
    rng = stream(seed, "illegal-violate")
    W = _dense_weights(schema, rng, False)
    hits = 0
    for _ in range(trials):
        G = flat_perm_matrix(random_illegal_perm(schema, rng))
        hits += commutation_defect(W, G) > tol
    witness = commutation_defect(W, flat_perm_matrix(swap_witness(schema))) > tol
    ok = hits >= need * trials and witness
    return CheckResult("illegal-violate", ok,
                       f"{hits}/{trials} random illegal permutations violate; swap witness "
                       f"{'violates' if witness else 'commutes'}")


def bias_invariance(schema: Schema, trials: int = 50, seed: int = 0) -> CheckResult:
    rng = stream(seed, "bias")
    w = TiedWeights.random(schema, rng=rng)
    b = materialize_bias(w)
    fixed = all(np.array_equal(perm_matrix(LegalPerm.random(schema, rng), schema) @ b, b) for _ in range(trials))
    Gw = flat_perm_matrix(swap_witness(schema))
    multi = any(not r.is_set for r in schema.relations)
    moved = not np.array_equal(Gw @ b, b)
    ok = fixed and (moved or not multi)
    tail = f"witness {'moves' if moved else 'fixes'} the bias" if multi else "no repeated entity, witness not applicable"
    return CheckResult("bias", ok, f"legal permutations {'fix' if fixed else 'move'} the bias; {tail}")


def pooled_vs_oracle(schema: Schema, trials: int = 5, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    sub = set_subschema(schema)
    if sub is None:
        return CheckResult("pooled-vs-oracle", True, "skipped: no relation without repeated entities")
    rng = stream(seed, "pooled")
    worst = 0.0
    act = Activation("leaky_relu")
    for t in range(trials):
        k_in, k_out = 1 + t % 2, 1 + (t // 2) % 2
        w = TiedWeights.random(sub, k_in, k_out, rng=rng)
        vals = [rng.normal(size=sub.shape(i) + (k_in,)) for i in range(sub.n_relations)]
        masks = [rng.uniform(size=sub.shape(i)) < 0.7 for i in range(sub.n_relations)]
        x = RelInstance.from_dense(sub, vals, masks)
        a, b = forward(x, w, act).values, forward_dense_oracle(x, w, act).values
        worst = max(worst, max(float(np.abs(u - v).max()) for u, v in zip(a, b)))
    scope = "" if sub.n_relations == schema.n_relations else f" (on the {sub.n_relations} set relations)"
    return CheckResult("pooled-vs-oracle", worst <= tol, f"max deviation {worst:.3g}{scope}")


def relative_error(a: float, n: float, floor: float = 1e-3) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def gradient_check(schema: Schema, seed: int = 0, step: float = 1e-6, tol: float = 1e-5) -> CheckResult:
    """Central differences of ``0.5 ||forward(x) - t||^2`` for every coordinate."""
    sub = set_subschema(schema)
    if sub is None:
        return CheckResult("gradient", True, "skipped: no relation without repeated entities")
    rng = stream(seed, "gradient")
    act = Activation("leaky_relu", 0.1)
    w = TiedWeights.random(sub, 2, 2, rng=rng)
    vals = [rng.normal(size=sub.shape(i) + (2,)) for i in range(sub.n_relations)]
    masks = [rng.uniform(size=sub.shape(i)) < 0.7 for i in range(sub.n_relations)]
    target = [rng.normal(size=sub.shape(i) + (2,)) for i in range(sub.n_relations)]

    def loss(w_, vals_):
        ys = forward(RelInstance.from_dense(sub, vals_, masks), w_, act, "mean").values
        return 0.5 * sum(float(((y - t) ** 2).sum()) for y, t in zip(ys, target))

    x = RelInstance.from_dense(sub, vals, masks)
    ys = forward(x, w, act, "mean").values
    gw, gx = backward(x, w, [y - t for y, t in zip(ys, target)], act, "mean")
    worst = 0.0
    vec, gvec = w.to_vector(), gw.to_vector()
    for k in range(len(vec)):
        e = np.zeros_like(vec)
        e[k] = step
        num = (loss(w.from_vector(vec + e), vals) - loss(w.from_vector(vec - e), vals)) / (2 * step)
        worst = max(worst, relative_error(gvec[k], num))
    for i, v in enumerate(vals):
        for idx in np.ndindex(v.shape):
            up = [u.copy() for u in vals]
            dn = [u.copy() for u in vals]
            up[i][idx] += step
            dn[i][idx] -= step
            num = (loss(w, up) - loss(w, dn)) / (2 * step)
            worst = max(worst, relative_error(gx[i][idx], num))
    n = len(vec) + sum(v.size for v in vals)
    return CheckResult("gradient", worst <= tol, f"max relative error {worst:.3g} over {n} coordinates")


def run_all(schema: Schema, trials: int = 100, seed: int = 0, break_tying: bool = False) -> list[CheckResult]:
    return [
        legal_commute(schema, trials, seed, break_tying=break_tying),
        layer_equivariance(schema, min(trials, 20), seed),
        illegal_violate(schema, 10, seed),
        bias_invariance(schema, min(trials, 50), seed),
        pooled_vs_oracle(schema, 5, seed),
        gradient_check(schema, seed),
    ]
