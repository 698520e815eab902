"""Synthetic student/course/professor data from coupled factor models.

Each entity instance gets an ``h``-dimensional embedding drawn uniformly
on (-1, 1); every pairwise table is ``Z1 Z2^T`` (CP) or ``Z1 C Z2^T``
(Tucker, one random core per relation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ._util import stream
from .relstore import RelInstance
from .schema import EntityDecl, Relation, Schema

PAIRS = ((1, 2), (1, 3), (2, 3))


def synth_schema(sizes: Sequence[int] = (50, 50, 50)) -> Schema:
    names = ("student", "course", "prof")
    ents = tuple(EntityDecl(k + 1, n, int(c)) for k, (n, c) in enumerate(zip(names, sizes)))
    rels = (Relation(0, "takes", (1, 2)), Relation(1, "refs", (1, 3)), Relation(2, "teaches", (2, 3)))
    return Schema(ents, rels)


@dataclass
class SynthConfig:
    sizes: tuple = (50, 50, 50)
    h: int = 2
    mode: str = "cp"
    sparsity: Union[float, tuple] = 0.5
    min_per_line: int = 5
    seed: int = 0
    identity_cores: bool = False

    def __post_init__(self):
        if self.mode not in ("cp", "tucker"):
            raise ValueError(f"mode must be 'cp' or 'tucker', got {self.mode!r}")
        if self.h < 1:
            raise ValueError("latent dimension h must be >= 1")
        for f in self.levels:
            if not 0 < f <= 1:
                raise ValueError(f"observation fraction must be in (0, 1], got {f}")
        if self.min_per_line < 0:
            raise ValueError("min_per_line must be >= 0")

    @property
    def levels(self) -> tuple:
        s = self.sparsity
        return tuple(s) if isinstance(s, (tuple, list)) else (float(s),) * len(PAIRS)


def generate(cfg: SynthConfig):
    """Fully observed ground truth plus the factors that produced it."""
    schema = synth_schema(cfg.sizes)
    rng = stream(cfg.seed, "data")
    Z = {d: rng.uniform(-1, 1, size=(n, cfg.h)) for d, n in schema.sizes.items()}
    crng = stream(cfg.seed, "cores")
    cores = {}
    for i, (a, b) in enumerate(PAIRS):
        if cfg.mode == "tucker":
            cores[i] = np.eye(cfg.h) if cfg.identity_cores else crng.uniform(-1, 1, size=(cfg.h, cfg.h))
    vals = []
    for i, (a, b) in enumerate(PAIRS):
        left = Z[a] @ cores[i] if i in cores else Z[a]
        vals.append((left @ Z[b].T)[..., None])
    return RelInstance.from_dense(schema, vals), {"Z": Z, "C": cores}


def line_counts(mask: np.ndarray) -> list[np.ndarray]:
    """Observed count of every slice, per axis (rows and columns for a matrix)."""
    axes = range(mask.ndim)
    return [mask.sum(axis=tuple(b for b in axes if b != a)) for a in axes]


def _augment(mask: np.ndarray, minimum: int, rng: np.random.Generator) -> np.ndarray:
    mask = mask.copy()
    for a, n in enumerate(mask.shape):
        if minimum > mask.size // n:
            raise ValueError(f"cannot place {minimum} observations in slices of size {mask.size // n}")
    while True:
        counts = line_counts(mask)
        lows = [(int(c.min()), a, int(c.argmin())) for a, c in enumerate(counts)]
        low, axis, idx = min(lows)
        if low >= minimum:
            return mask
        sl = np.take(mask, idx, axis=axis)
        free = np.argwhere(~sl)
        pick = list(free[rng.integers(len(free))])
        pick.insert(axis, idx)
        mask[tuple(pick)] = True


def sparsify(x: RelInstance, cfg: SynthConfig, target: int = 0):
    """Train/test masks: uniform sample at each level, then top up thin lines.

    Returns ``(train_masks, test_masks)``; only the target relation has test
    entries (everything it does not observe).
    """
    rng = stream(cfg.seed, "masks")
    train, test = [], []
    for i, frac in enumerate(cfg.levels):
        shape = x.schema.shape(i)
        size = int(np.prod(shape))
        mask = np.zeros(size, dtype=bool)
        mask[rng.choice(size, size=int(round(frac * size)), replace=False)] = True
        mask = _augment(mask.reshape(shape), cfg.min_per_line, rng)
        train.append(mask)
        test.append(~mask & x.masks[i] if i == target else np.zeros(shape, dtype=bool))
    return train, test


@dataclass
class HeldoutSplit:
    """A fixed test set in the target plus a nested order for the rest."""

    test_mask: np.ndarray
    target: int
    ranks: list  # per relation: rank of each cell among available cells (-1 if unavailable)
    available: list

    def train_masks(self, level: float) -> list[np.ndarray]:
        """Nested observed sets: the first ``level`` fraction of each order."""
        return [(r >= 0) & (r < int(round(level * n))) for r, n in zip(self.ranks, self.available)]

    def test_masks(self) -> list[np.ndarray]:
        return [self.test_mask if i == self.target else np.zeros(r.shape, dtype=bool)
                for i, r in enumerate(self.ranks)]


def heldout_split(x: RelInstance, target: int = 0, fraction: float = 0.1, seed: int = 0) -> HeldoutSplit:
    rng = stream(seed, "heldout")
    obs = np.flatnonzero(x.masks[target])
    n_test = int(round(fraction * len(obs)))
    test = np.zeros(x.masks[target].size, dtype=bool)
    test[rng.choice(obs, size=n_test, replace=False)] = True
    test = test.reshape(x.masks[target].shape)
    ranks, avail = [], []
    for i, m in enumerate(x.masks):
        ok = m & ~test if i == target else m.copy()
        cells = np.flatnonzero(ok)
        r = np.full(m.size, -1)
        r[rng.permutation(cells)] = np.arange(len(cells))
        ranks.append(r.reshape(m.shape))
        avail.append(len(cells))
    return HeldoutSplit(test, target, ranks, avail)
