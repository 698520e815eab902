"""Set partitions as restricted growth strings (RGS).

A partition of positions 0..L-1 is coded by ``a`` with ``a[0] == 0`` and
``a[t] <= 1 + max(a[:t])``; positions share a block iff they share a code.
Partitions are ordered lexicographically by their RGS, so the all-zeros
string (one block) comes first and ``(0, 1, ..., L-1)`` last.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence, Tuple

PartitionCode = Tuple[int, ...]

BELL_MAX = 20
ENUM_MAX = 12


@lru_cache(maxsize=None)
def _bell_row(n: int) -> tuple[int, ...]:
    # Bell triangle; the first entry of row n is bell(n).
    row = (1,)
    rows = [row]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = tuple(nxt)
        rows.append(row)
    return tuple(r[0] for r in rows)


def bell(n: int) -> int:
    """Number of partitions of an n-element set."""
    if n < 0:
        raise ValueError("bell(n) needs n >= 0")
    if n > BELL_MAX:
        raise OverflowError(f"bell({n}) refused: arities above {BELL_MAX} are not supported")
    return _bell_row(BELL_MAX)[n]


@lru_cache(maxsize=None)
def enumerate_partitions(n: int) -> tuple[PartitionCode, ...]:
    """All partitions of n positions in lexicographic RGS order."""
    if not 1 <= n <= ENUM_MAX:
        raise ValueError(f"enumerate_partitions needs 1 <= n <= {ENUM_MAX}, got {n}")
    out: list[PartitionCode] = []

    def extend(prefix: list[int], top: int):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for v in range(top + 2):
            prefix.append(v)
            extend(prefix, max(top, v))
            prefix.pop()

    extend([0], 0)
    return tuple(out)


def partition_of(t: Sequence) -> PartitionCode:
    """Equality pattern of a tuple, labelled in first-occurrence order."""
    if len(t) == 0:
        raise ValueError("partition_of needs a nonempty tuple")
    seen: dict = {}
    return tuple(seen.setdefault(v, len(seen)) for v in t)


def is_rgs(p: Sequence[int]) -> bool:
    if len(p) == 0 or p[0] != 0:
        return False
    top = 0
    for v in p[1:]:
        if v < 0 or v > top + 1:
            return False
        top = max(top, v)
    return True


@lru_cache(maxsize=None)
def _completions(remaining: int, blocks: int) -> int:
    # number of ways to finish an RGS with `remaining` positions left when
    # `blocks` distinct codes are already in use
    if remaining == 0:
        return 1
    return blocks * _completions(remaining - 1, blocks) + _completions(remaining - 1, blocks + 1)


def partition_index(p: Sequence[int]) -> int:
    """Rank of an RGS within enumerate_partitions(len(p))."""
    if not is_rgs(p):
        raise ValueError(f"not a restricted growth string: {tuple(p)}")
    L = len(p)
    rank, blocks = 0, 1
    for t in range(1, L):
        for v in range(p[t]):
            rank += _completions(L - t - 1, max(blocks, v + 1))
        blocks = max(blocks, p[t] + 1)
    return rank
