"""Coupled CP / Tucker matrix factorization baselines.

Each entity has one factor matrix shared by every relation it appears in.
C-CPF reconstructs a pairwise table as ``Z1 Z2^T``; C-TKF as ``Z1 C Z2^T``
with a learned core per relation.  Fitting is plain gradient descent (or Adam) on the masked
squared error (or on zero-filled tables with ``zero_fill=True``).
"""

from __future__ import annotations

import csv
import os

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from ._util import Adam, DivergenceError, rmse, stream
from .relstore import RelInstance
from .schema import Schema


@dataclass
class FactorSet:
    factors: dict  # entity id -> (N_d, r)
    cores: Optional[dict] = None  # relation index -> (r, r), Tucker only
    history: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return next(iter(self.factors.values())).shape[1]


def _check_pairwise(schema: Schema):
    for r in schema.relations:
        if len(r.members) != 2 or not r.is_set:
            raise ValueError(f"relation {r.name!r} is not a pairwise relation of distinct entities")


def reconstruct(f: FactorSet, schema: Schema, i: int) -> np.ndarray:
    a, b = schema.relations[i].members
    left = f.factors[a]
    if f.cores is not None:
        left = left @ f.cores[i]
    return left @ f.factors[b].T


def objective(f: FactorSet, x: RelInstance, zero_fill: bool = False):
    """Loss ``0.5 * sum of squared residuals / n_observed`` and its gradients."""
    s = x.schema
    if zero_fill:
        masks = [np.ones_like(m) for m in x.masks]
        targets = [v[..., 0] * m for v, m in zip(x.values, x.masks)]
    else:
        masks = x.masks
        targets = [v[..., 0] for v in x.values]
    n = max(sum(int(m.sum()) for m in masks), 1)
    gZ = {d: np.zeros_like(z) for d, z in f.factors.items()}
    gC = {i: np.zeros_like(c) for i, c in f.cores.items()} if f.cores is not None else None
    loss = 0.0
    for i, rel in enumerate(s.relations):
        a, b = rel.members
        E = (reconstruct(f, s, i) - targets[i]) * masks[i]
        loss += 0.5 * float((E * E).sum()) / n
        E = E / n
        Za, Zb = f.factors[a], f.factors[b]
        if f.cores is None:
            gZ[a] += E @ Zb
            gZ[b] += E.T @ Za
        else:
            C = f.cores[i]
            gZ[a] += E @ Zb @ C.T
            gZ[b] += E.T @ Za @ C
            gC[i] += Za.T @ E @ Zb
    return loss, gZ, gC


def _fit(x: RelInstance, rank: int, iters: int, lr: float, seed: int, tucker: bool,
         optimizer: str, zero_fill: bool) -> FactorSet:
    _check_pairwise(x.schema)
    rng = stream(seed, "init")
    scale = 1.0 / np.sqrt(rank)
    factors = {d: rng.uniform(-0.5, 0.5, size=(n, rank)) * scale for d, n in x.schema.sizes.items()}
    cores = None
    if tucker:
        cores = {i: np.eye(rank) + rng.uniform(-0.5, 0.5, size=(rank, rank)) * scale
                 for i in range(x.schema.n_relations)}
    f = FactorSet(factors, cores)
    params = list(factors.values()) + (list(cores.values()) if tucker else [])
    opt = Adam(params, lr) if optimizer == "adam" else None
    for step in range(iters):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gZ, gC = objective(f, x, zero_fill)
        if not np.isfinite(loss):
            raise DivergenceError("cmtf", step, f.history)
        f.history.append(loss)
        grads = list(gZ.values()) + (list(gC.values()) if tucker else [])
        if opt is not None:
            opt.step(grads)
        else:
            for p, g in zip(params, grads):
                p -= lr * g
    return f


def fit_ccpf(x: RelInstance, rank: int = 10, iters: int = 2000, lr: float = 10.0, seed: int = 0,
             optimizer: str = "gd", zero_fill: bool = False) -> FactorSet:
    return _fit(x, rank, iters, lr, seed, False, optimizer, zero_fill)


def fit_ctkf(x: RelInstance, rank: int = 10, iters: int = 2000, lr: float = 10.0, seed: int = 0,
             optimizer: str = "gd", zero_fill: bool = False) -> FactorSet:
    return _fit(x, rank, iters, lr, seed, True, optimizer, zero_fill)


def dump_factors(f: FactorSet, schema: Schema, directory: str) -> list[str]:
    """One CSV per entity factor (``instance,z1..zr``) and per Tucker core."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for d, Z in f.factors.items():
        path = os.path.join(directory, f"factor_{schema.entities[d - 1].name}.csv")
        _write_matrix(path, Z, "instance", "z")
        written.append(path)
    for i, C in (f.cores or {}).items():
        path = os.path.join(directory, f"core_{schema.relations[i].name}.csv")
        _write_matrix(path, C, "row", "c")
        written.append(path)
    return written


def _write_matrix(path: str, M: np.ndarray, first: str, prefix: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([first] + [f"{prefix}{k + 1}" for k in range(M.shape[1])])
        for n, row in enumerate(M):
            w.writerow([n + 1] + [repr(float(v)) for v in row])


def evaluate_cmtf(f: FactorSet, x: RelInstance, test_mask: np.ndarray, relation: int = 0) -> float:
    return rmse(reconstruct(f, x.schema, relation), x.values[relation][..., 0], test_mask)


class CoupledFactorization(BaseEstimator):
    """Estimator wrapper: ``method`` is ``"cp"`` (C-CPF) or ``"tucker"`` (C-TKF)."""

    def __init__(self, method: str = "cp", rank: int = 10, n_iter: int = 2000, lr: float = 10.0,
                 seed: int = 0, optimizer: str = "gd", zero_fill: bool = False):
        self.method = method
        self.rank = rank
        self.n_iter = n_iter
        self.lr = lr
        self.seed = seed
        self.optimizer = optimizer
        self.zero_fill = zero_fill

    def fit(self, X: RelInstance, y=None):
        if self.method not in ("cp", "tucker"):
            raise ValueError(f"method must be 'cp' or 'tucker', got {self.method!r}")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"optimizer must be 'adam' or 'gd', got {self.optimizer!r}")
        self.factors_ = _fit(X, self.rank, self.n_iter, self.lr, self.seed,
                             self.method == "tucker", self.optimizer, self.zero_fill)
        self.schema_ = X.schema
        return self

    def predict(self, X: RelInstance | None = None) -> list[np.ndarray]:
        """Reconstructed tables, one dense matrix per relation."""
        s = self.schema_ if X is None else X.schema
        return [reconstruct(self.factors_, s, i) for i in range(s.n_relations)]

    def rmse(self, X: RelInstance, test_mask: np.ndarray, relation: int = 0) -> float:
        return evaluate_cmtf(self.factors_, X, test_mask, relation)

    def score(self, X: RelInstance, test_mask: np.ndarray, relation: int = 0) -> float:
        return -self.rmse(X, test_mask, relation)
