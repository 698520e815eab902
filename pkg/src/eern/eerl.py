"""Pooled equivariant layer for schemas without self-relations.

For output relation ``i`` and input relation ``j`` the layer adds, for
every subset ``S`` of their shared entities, the input pooled over ``S``
(and over every entity of ``R_j`` missing from ``R_i``), mixed across
channels by a ``K x K'`` coefficient matrix and broadcast back over the
axes of ``R_i``.  Cost is linear in the data size.

Coefficients live in the pooling basis (see ``tying.subset_basis``);
``forward``/``backward`` accept class-basis :class:`TiedWeights` and
convert, so results match the dense oracle exactly in ``sum`` mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .relstore import RelInstance
from .schema import Schema
from .tying import TiedWeights, class_to_pool, pool_to_class, subset_basis

POOL_MODES = ("sum", "mean")


@dataclass(frozen=True)
class Activation:
    kind: str = "identity"
    leak: float = 0.01

    def __post_init__(self):
        if self.kind not in ("identity", "leaky_relu"):
            raise ValueError(f"unknown activation {self.kind!r}")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return z
        return np.where(z > 0, z, self.leak * z)

    def grad(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.ones_like(z)
        return np.where(z > 0, 1.0, self.leak)


IDENTITY = Activation("identity")


def _check_mode(mode: str) -> str:
    if mode == "observed-mean":
        mode = "mean"
    if mode not in POOL_MODES:
        raise ValueError(f"pool mode must be 'sum' or 'mean', got {mode!r}")
    return mode


def _divide(total: np.ndarray, count: np.ndarray) -> np.ndarray:
    count = count[..., None]
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)


def pool(x: np.ndarray, members: Sequence[int], S, mode: str = "sum", mask=None) -> np.ndarray:
    """Sum (or observed mean) of ``x`` over the axes of the entities in ``S``.

    ``x`` has one leading axis per member; trailing axes (channels) are
    kept.  The result keeps the remaining member axes in their order.
    """
    mode = _check_mode(mode)
    S = set(S)
    if not S <= set(members):
        raise ValueError(f"pooled entities {sorted(S)} are not all in {tuple(members)}")
    if len(set(members)) != len(members):
        raise ValueError("pool needs a relation without repeated entities")
    axes = tuple(a for a, d in enumerate(members) if d in S)
    if mask is None:
        if mode == "mean":
            raise ValueError("observed-mean pooling needs a mask")
        return x.sum(axis=axes)
    mask = np.asarray(mask, dtype=bool)
    xm = x * mask.reshape(mask.shape + (1,) * (x.ndim - mask.ndim))
    total = xm.sum(axis=axes)
    if mode == "sum":
        return total
    count = mask.sum(axis=axes)
    count = count.reshape(count.shape + (1,) * (total.ndim - count.ndim))
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)


def broadcast(y: np.ndarray, kept: Sequence[int], members: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    """Replicate ``y`` (axes = ``kept`` entities in order) over relation axes.

    ``kept`` must list entities in the order they appear in ``members``;
    trailing axes of ``y`` beyond the kept ones are carried through.
    """
    kept = list(kept)
    order = [d for d in members if d in kept]
    if order != kept:
        raise ValueError("kept entities must follow the target member order")
    extra = y.shape[len(kept):]
    expand = [n if d in kept else 1 for d, n in zip(members, shape)]
    return np.broadcast_to(y.reshape(tuple(expand) + extra), tuple(shape) + extra)


@dataclass(frozen=True)
class PoolTerm:
    ordinal: int
    pooled: tuple[int, ...]  # shared entities summed over
    src_axes: tuple[int, ...]  # axes of X_j summed away
    tgt_axes: tuple[int, ...]  # axes of X_i summed away in the adjoint
    to_target: tuple[int, ...]  # transpose of the kept axes from R_j order to R_i order
    expand: tuple[int, ...]  # target-shaped reshape with 1 on broadcast axes


@dataclass(frozen=True)
class PoolPlan:
    schema: Schema
    terms: dict

    def block(self, i: int, j: int) -> tuple[PoolTerm, ...]:
        return self.terms[i, j]


@lru_cache(maxsize=64)
def build_plan(schema: Schema) -> PoolPlan:
    if not schema.repeat_free:
        bad = [r.name for r in schema.relations if not r.is_set]
        raise ValueError(f"pooled layer needs repeat-free relations; {bad} repeat an entity "
                         "(use forward_dense_oracle)")
    terms = {}
    for i, ri in enumerate(schema.relations):
        shape_i = schema.shape(i)
        for j, rj in enumerate(schema.relations):
            basis = subset_basis(schema, i, j)
            block = []
            for k, ordinal in enumerate(basis.ordinals):
                pooled = basis.pooled(k)
                kept = [d for d in basis.shared if d not in pooled]
                src_axes = tuple(a for a, d in enumerate(rj.members) if d not in kept)
                tgt_axes = tuple(a for a, d in enumerate(ri.members) if d not in kept)
                kept_src = [d for d in rj.members if d in kept]
                kept_tgt = [d for d in ri.members if d in kept]
                to_target = tuple(kept_src.index(d) for d in kept_tgt)
                expand = tuple(n if d in kept else 1 for d, n in zip(ri.members, shape_i))
                block.append(PoolTerm(ordinal, pooled, src_axes, tgt_axes, to_target, expand))
            terms[i, j] = tuple(block)
    return PoolPlan(schema, terms)


def pool_coefficients(w: TiedWeights) -> dict:
    """Class-basis blocks -> pooling-basis coefficient blocks."""
    s = w.schema
    return {(i, j): class_to_pool(s, i, j, v) for (i, j), v in w.blocks.items()}


def weights_from_coefficients(schema: Schema, coefs: dict, biases: Sequence[np.ndarray]) -> TiedWeights:
    blocks = {(i, j): pool_to_class(schema, i, j, c) for (i, j), c in coefs.items()}
    any_block = next(iter(coefs.values()))
    return TiedWeights(schema, any_block.shape[1], any_block.shape[2], blocks,
                       [np.array(b, dtype=float) for b in biases])


@dataclass
class LayerCache:
    xm: list
    masks: list
    pre: list
    pooled: dict
    counts: dict
    mode: str
    act: Activation


def forward_arrays(xs: Sequence[np.ndarray], masks: Sequence[np.ndarray], coefs: dict,
                   biases: Sequence[np.ndarray], act: Activation = IDENTITY, mode: str = "sum",
                   plan: PoolPlan | None = None, schema: Schema | None = None):
    """Array-level forward pass in the pooling basis.

    ``xs[j]`` is ``(*shape_j, K)``; ``biases[i]`` is ``(1, K')``.  Returns the
    activated outputs and a cache for :func:`backward_arrays`.
    """
    mode = _check_mode(mode)
    plan = plan or build_plan(schema)
    s = plan.schema
    R = range(s.n_relations)
    masks = [np.asarray(m, dtype=bool) for m in masks]
    xm = [x * m[..., None] for x, m in zip(xs, masks)]
    pooled, counts = {}, {}
    pre = []
    for i in R:
        k_out = biases[i].shape[-1]
        out = np.zeros(s.shape(i) + (k_out,))
        for j in R:
            c = coefs[i, j]
            if c.shape[1] != xs[j].shape[-1]:
                raise ValueError(f"relation {j} has {xs[j].shape[-1]} channels, weights expect {c.shape[1]}")
            for t in plan.block(i, j):
                key = (j, t.src_axes)
                if key not in pooled:
                    total = xm[j].sum(axis=t.src_axes) if t.src_axes else xm[j]
                    if mode == "mean":
                        cnt = masks[j].sum(axis=t.src_axes) if t.src_axes else masks[j].astype(float)
                        counts[key] = cnt
                        total = _divide(total, cnt)
                    pooled[key] = total
                p = pooled[key]
                if t.to_target != tuple(range(len(t.to_target))):
                    p = p.transpose(t.to_target + (p.ndim - 1,))
                out += (p @ c[t.ordinal]).reshape(t.expand + (k_out,))
        out += biases[i][0]
        pre.append(out)
    ys = [act(z) for z in pre]
    return ys, LayerCache(xm, masks, pre, pooled, counts, mode, act)


def backward_arrays(cache: LayerCache, grads: Sequence[np.ndarray], coefs: dict,
                    plan: PoolPlan | None = None, schema: Schema | None = None,
                    need_input: bool = True):
    """Exact adjoint of :func:`forward_arrays`.

    Returns ``(coef_grads, bias_grads, input_grads)``; input gradients are
    zero on unobserved entries since those are masked out going in.
    """
    plan = plan or build_plan(schema)
    s = plan.schema
    R = range(s.n_relations)
    gz = [g * cache.act.grad(z) for g, z in zip(grads, cache.pre)]
    gb = [g.reshape(-1, g.shape[-1]).sum(axis=0, keepdims=True) for g in gz]
    gc = {key: np.zeros_like(c) for key, c in coefs.items()}
    gx = [np.zeros_like(x) for x in cache.xm] if need_input else None
    gpool = {}
    for i in R:
        for j in R:
            c = coefs[i, j]
            for t in plan.block(i, j):
                gkey = (i, t.tgt_axes)
                if gkey not in gpool:
                    gpool[gkey] = gz[i].sum(axis=t.tgt_axes) if t.tgt_axes else gz[i]
                g = gpool[gkey]  # kept axes in R_i order, K'
                p = cache.pooled[j, t.src_axes]
                if t.to_target != tuple(range(len(t.to_target))):
                    p = p.transpose(t.to_target + (p.ndim - 1,))
                nk = g.ndim - 1
                gc[i, j][t.ordinal] += np.tensordot(p, g, axes=(list(range(nk)), list(range(nk))))
                if not need_input:
                    continue
                gp = g @ c[t.ordinal].T  # kept axes in R_i order, K
                if t.to_target != tuple(range(len(t.to_target))):
                    gp = gp.transpose(tuple(np.argsort(t.to_target)) + (gp.ndim - 1,))
                if cache.mode == "mean":
                    gp = _divide(gp, cache.counts[j, t.src_axes])
                shape_j = cache.xm[j].shape
                expand = tuple(1 if a in t.src_axes else n for a, n in enumerate(shape_j[:-1]))
                gx[j] += gp.reshape(expand + (gp.shape[-1],))
    if need_input:
        gx = [g * m[..., None] for g, m in zip(gx, cache.masks)]
    return gc, gb, gx


def forward(x: RelInstance, w: TiedWeights, act: Activation = IDENTITY, mode: str = "sum") -> RelInstance:
    """One layer, ``sigma(W vec(X) + vec(B))``, computed by pooling."""
    if x.schema != w.schema:
        raise ValueError("instance and weights use different schemas")
    if x.channels != w.k_in:
        raise ValueError(f"input has {x.channels} channels, weights expect {w.k_in}")
    plan = build_plan(x.schema)
    ys, _ = forward_arrays(x.values, x.masks, pool_coefficients(w), w.biases, act, mode, plan)
    return RelInstance(x.schema, ys, x.masks)


def backward(x: RelInstance, w: TiedWeights, upstream: Sequence[np.ndarray],
             act: Activation = IDENTITY, mode: str = "sum"):
    """Gradients of ``sum(upstream * forward(x))`` w.r.t. weights and input.

    Returns ``(TiedWeights of gradients, list of input gradients)``.
    """
    plan = build_plan(x.schema)
    coefs = pool_coefficients(w)
    ys, cache = forward_arrays(x.values, x.masks, coefs, w.biases, act, mode, plan)
    for y, g in zip(ys, upstream):
        if y.shape != np.shape(g):
            raise ValueError(f"upstream gradient shape {np.shape(g)} != output shape {y.shape}")
    gc, gb, gx = backward_arrays(cache, upstream, coefs, plan)
    s = x.schema
    # chain rule through coef = mobius @ class_values
    blocks = {(i, j): pool_to_class_adjoint(s, i, j, g) for (i, j), g in gc.items()}
    gw = TiedWeights(s, w.k_in, w.k_out, blocks, gb)
    return gw, gx


def pool_to_class_adjoint(schema: Schema, i: int, j: int, g: np.ndarray) -> np.ndarray:
    basis = subset_basis(schema, i, j)
    return np.tensordot(basis.mobius.T, g, axes=(1, 0))


def forward_dense_oracle(x: RelInstance, w: TiedWeights, act: Activation = IDENTITY) -> RelInstance:
    from .oracle import forward_dense_oracle as _dense

    return _dense(x, w, act)
