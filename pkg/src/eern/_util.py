from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, where: str, step: int, history: Sequence[float] = ()):
        last = [f"{v:.4g}" for v in list(history)[-3:]]
        super().__init__(f"{where}: non-finite loss at step {step} (last losses {last})")
        self.step = step


def stream(seed: int, name: str) -> np.random.Generator:
    """Named, independent random stream derived from one integer seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, params: list, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def rmse(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    d = (np.asarray(pred) - np.asarray(truth))[mask]
    return float(np.sqrt(np.mean(d * d)))
