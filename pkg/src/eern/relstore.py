"""Relational data as coupled tensors.

``SparseRelTensor`` is the coordinate form (what a table or CSV holds).
``RelInstance`` keeps one dense ``(*shape, K)`` array per relation plus a
boolean observation mask; unobserved entries read as 0.0.

Vectorization is row-major over the declared axis order (last member
fastest) with channels innermost, relations concatenated in schema order.
Indices are 1-based in files and 0-based in arrays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .schema import Schema


class DataError(ValueError):
    """Raised for malformed or inconsistent relational data."""


@dataclass
class SparseRelTensor:
    relation: int
    shape: tuple[int, ...]
    channels: int
    indices: np.ndarray  # (M, |R|) int, 0-based
    values: np.ndarray  # (M, K)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, len(self.shape))
        self.values = np.asarray(self.values, dtype=float).reshape(-1, self.channels)
        if len(self.indices) != len(self.values):
            raise DataError("indices and values disagree in length")
        if len(self.indices):
            if (self.indices < 0).any() or (self.indices >= np.array(self.shape)).any():
                raise DataError("index out of range")
            flat = np.ravel_multi_index(self.indices.T, self.shape)
            if len(np.unique(flat)) != len(flat):
                raise DataError("duplicate index tuple")

    def __len__(self):
        return len(self.indices)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[tuple(self.indices.T)] = True
        return m

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape + (self.channels,))
        out[tuple(self.indices.T)] = self.values
        return out

    @classmethod
    def from_dense(cls, relation: int, values: np.ndarray, mask=None) -> "SparseRelTensor":
        shape = values.shape[:-1]
        mask = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        idx = np.argwhere(mask)
        return cls(relation, shape, values.shape[-1], idx, values[mask])


def to_dense(t: SparseRelTensor) -> np.ndarray:
    return t.to_dense()


@dataclass
class RelInstance:
    schema: Schema
    values: list[np.ndarray]
    masks: list[np.ndarray]

    def __post_init__(self):
        s = self.schema
        if len(self.values) != s.n_relations or len(self.masks) != s.n_relations:
            raise DataError("need one tensor and one mask per relation")
        self.values = [np.asarray(v, dtype=float) for v in self.values]
        self.masks = [np.asarray(m, dtype=bool) for m in self.masks]
        ks = {v.shape[-1] for v in self.values}
        if len(ks) > 1:
            raise DataError(f"relations disagree on channel count: {sorted(ks)}")
        for i, (v, m) in enumerate(zip(self.values, self.masks)):
            if v.shape[:-1] != s.shape(i) or m.shape != s.shape(i):
                raise DataError(f"relation {s.relations[i].name!r}: shape {v.shape[:-1]} "
                                f"does not match schema {s.shape(i)}")

    @property
    def channels(self) -> int:
        return self.values[0].shape[-1] if self.values else 0

    @classmethod
    def from_dense(cls, schema: Schema, values: Sequence[np.ndarray], masks=None) -> "RelInstance":
        values = [np.asarray(v, dtype=float) for v in values]
        values = [v[..., None] if v.ndim == len(schema.shape(i)) else v for i, v in enumerate(values)]
        if masks is None:
            masks = [np.ones(schema.shape(i), dtype=bool) for i in range(schema.n_relations)]
        return cls(schema, values, list(masks))

    @classmethod
    def from_sparse(cls, schema: Schema, tensors: Sequence[SparseRelTensor]) -> "RelInstance":
        tensors = sorted(tensors, key=lambda t: t.relation)
        if [t.relation for t in tensors] != list(range(schema.n_relations)):
            raise DataError("need exactly one sparse tensor per relation")
        return cls(schema, [t.to_dense() for t in tensors], [t.mask for t in tensors])

    @classmethod
    def zeros(cls, schema: Schema, channels: int = 1) -> "RelInstance":
        R = range(schema.n_relations)
        return cls(schema, [np.zeros(schema.shape(i) + (channels,)) for i in R],
                   [np.ones(schema.shape(i), dtype=bool) for i in R])

    def sparse(self, i: int) -> SparseRelTensor:
        return SparseRelTensor.from_dense(i, self.values[i], self.masks[i])

    def masked(self) -> list[np.ndarray]:
        """Values with unobserved entries forced to zero."""
        return [v * m[..., None] for v, m in zip(self.values, self.masks)]

    def with_masks(self, masks: Sequence[np.ndarray]) -> "RelInstance":
        return RelInstance(self.schema, self.values, list(masks))

    def observed(self, masks: Sequence[np.ndarray]) -> "RelInstance":
        """Restrict to ``masks``: values outside are zeroed."""
        masks = [np.asarray(m, dtype=bool) for m in masks]
        return RelInstance(self.schema, [v * m[..., None] for v, m in zip(self.values, masks)], masks)


@dataclass
class DenseVec:
    values: np.ndarray
    schema: Schema
    channels: int = 1

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(o * self.channels for o in self.schema.offsets)

    @property
    def lengths(self) -> tuple[int, ...]:
        s = self.schema
        return tuple(s.relation_size(i) * self.channels for i in range(s.n_relations))

    def segment(self, i: int) -> np.ndarray:
        o = self.offsets[i]
        return self.values[o:o + self.lengths[i]]


def vectorize(x: RelInstance) -> DenseVec:
    vals = np.concatenate([v.ravel() for v in x.masked()]) if x.values else np.zeros(0)
    return DenseVec(vals, x.schema, x.channels)


def unvectorize(v, schema: Schema, channels: int = 1) -> RelInstance:
    vals = np.asarray(v.values if isinstance(v, DenseVec) else v, dtype=float)
    if isinstance(v, DenseVec):
        channels = v.channels
    need = schema.total_size * channels
    if vals.shape != (need,):
        raise DataError(f"vector has length {vals.size}, schema needs {need}")
    out, k = [], 0
    for i in range(schema.n_relations):
        n = schema.relation_size(i) * channels
        out.append(vals[k:k + n].reshape(schema.shape(i) + (channels,)))
        k += n
    return RelInstance.from_dense(schema, out)


# -- text formats ------------------------------------------------------------
def _header_entities(schema: Schema, i: int, header: Sequence[str]) -> int:
    rel = schema.relations[i]
    names = [schema.entities[d - 1].name for d in rel.members]
    if [h.strip() for h in header[:len(names)]] != names:
        raise DataError(f"header must start with entity columns {names}, got {list(header)}")
    return len(names)


def ingest_csv(schema: Schema, relation, reader: Iterable[str],
               require_channels: bool = True) -> SparseRelTensor:
    """Read ``entity..., channel...`` rows (1-based indices) into a sparse tensor."""
    i = schema.relation_index(relation)
    shape = schema.shape(i)
    rows = csv.reader(reader)
    try:
        header = next(rows)
    except StopIteration:
        raise DataError("missing header row") from None
    k = _header_entities(schema, i, header)
    channels = len(header) - k
    if require_channels and channels < 1:
        raise DataError("no channel columns in header")
    idx, vals = [], []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            n = [int(c) for c in row[:k]]
            x = [float(c) for c in row[k:]]
        except ValueError:
            raise DataError(f"line {lineno}: malformed number in {row}") from None
        for a, (v, size) in enumerate(zip(n, shape)):
            if not 1 <= v <= size:
                raise DataError(f"line {lineno}: index {v} out of range 1..{size} on axis {a}")
        idx.append([v - 1 for v in n])
        vals.append(x)
    idx = np.array(idx, dtype=np.int64).reshape(-1, k)
    if channels:
        vals = np.array(vals, dtype=float).reshape(-1, channels)
    else:
        # index-only file: a mask, carried as a single zero channel
        channels, vals = 1, np.zeros((len(idx), 1))
    try:
        return SparseRelTensor(i, shape, channels, idx, vals)
    except DataError as exc:
        raise DataError(f"relation {schema.relations[i].name!r}: {exc}") from None


def read_mask_csv(schema: Schema, relation, reader) -> np.ndarray:
    """A mask file is a CSV of index columns only."""
    return ingest_csv(schema, relation, reader, require_channels=False).mask


def write_csv(schema: Schema, i: int, values: np.ndarray, mask: np.ndarray, fh: TextIO,
              channel_names: Sequence[str] | None = None) -> None:
    rel = schema.relations[i]
    k = values.shape[-1]
    channel_names = channel_names or (["value"] if k == 1 else [f"c{c + 1}" for c in range(k)])
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([schema.entities[d - 1].name for d in rel.members] + list(channel_names))
    for n in np.argwhere(mask):
        w.writerow([int(v) + 1 for v in n] + [repr(float(v)) for v in values[tuple(n)]])


def write_mask_csv(schema: Schema, i: int, mask: np.ndarray, fh: TextIO) -> None:
    rel = schema.relations[i]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([schema.entities[d - 1].name for d in rel.members])
    for n in np.argwhere(mask):
        w.writerow([int(v) + 1 for v in n])


def write_densevec(v: DenseVec, fh: TextIO) -> None:
    for i, rel in enumerate(v.schema.relations):
        fh.write(f"# relation {rel.name} offset {v.offsets[i]} len {v.lengths[i]}\n")
        for x in v.segment(i):
            fh.write(f"{float(x)!r}\n")


def read_densevec(fh: TextIO, schema: Schema) -> DenseVec:
    vals = [float(ln) for ln in fh if ln.strip() and not ln.startswith("#")]
    n = len(vals)
    channels, rem = divmod(n, schema.total_size) if schema.total_size else (1, 0)
    if rem or channels < 1:
        raise DataError(f"{n} values do not fit schema of size {schema.total_size}")
    return DenseVec(np.array(vals), schema, channels)
