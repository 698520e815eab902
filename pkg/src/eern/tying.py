"""Parameter tying for equivariant entity-relationship layers.

Every entry of a weight block ``W[i, j]`` belongs to a class determined by
the per-entity equality pattern of the concatenated index ``n_i + n_j``.
Classes are numbered by a mixed radix over the distinct entities of the
block (ascending id, last entity fastest); each entity contributes the
rank of its equality pattern among ``enumerate_partitions(arity)``.

For repeat-free blocks there is a second, equivalent basis: one
coefficient per subset ``S`` of shared entities, weighting
``pool(X_j, S)`` broadcast into ``X_i``.  :func:`pool_to_class` and
:func:`class_to_pool` convert between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import prod
from typing import Iterator, Sequence, TextIO

import numpy as np

from .partitions import bell, enumerate_partitions, partition_index, partition_of
from .schema import Schema, multiset_union


@dataclass(frozen=True)
class BlockSpec:
    i: int
    j: int
    entities: tuple[int, ...]
    arities: tuple[int, ...]
    positions: tuple[tuple[int, ...], ...]
    radices: tuple[int, ...]
    strides: tuple[int, ...]

    @property
    def class_count(self) -> int:
        return prod(self.radices)


def _make_spec(i: int, j: int, members: Sequence[int]) -> BlockSpec:
    ents = tuple(sorted(set(members)))
    positions = tuple(tuple(p for p, d in enumerate(members) if d == e) for e in ents)
    arities = tuple(len(p) for p in positions)
    radices = tuple(bell(a) for a in arities)
    strides = tuple(prod(radices[k + 1:]) for k in range(len(radices)))
    return BlockSpec(i, j, ents, arities, positions, radices, strides)


@lru_cache(maxsize=None)
def block_spec(schema: Schema, i: int, j: int) -> BlockSpec:
    """Class indexing for block (i, j); positions index ``n_i + n_j``."""
    members = schema.relations[i].members + schema.relations[j].members
    return _make_spec(i, j, members)


@lru_cache(maxsize=None)
def bias_spec(schema: Schema, i: int) -> BlockSpec:
    return _make_spec(i, i, schema.relations[i].members)


def num_free_params(schema: Schema, i: int, j: int) -> int:
    union = multiset_union(schema.relations[i], schema.relations[j])
    return prod(bell(k) for k in union.values())


def bias_num_params(schema: Schema, i: int) -> int:
    return prod(bell(k) for k in schema.relations[i].counts.values())


def _ordinal(spec: BlockSpec, t: Sequence) -> int:
    out = 0
    for pos, stride in zip(spec.positions, spec.strides):
        out += stride * partition_index(partition_of([t[p] for p in pos]))
    return out


def class_of(schema: Schema, i: int, n_i: Sequence[int], j: int, n_j: Sequence[int]) -> int:
    """Class ordinal of entry ``W[i, j][n_i, n_j]``."""
    ri, rj = schema.relations[i], schema.relations[j]
    if len(n_i) != len(ri.members) or len(n_j) != len(rj.members):
        raise ValueError("index tuple length does not match relation arity")
    return _ordinal(block_spec(schema, i, j), tuple(n_i) + tuple(n_j))


def bias_class_of(schema: Schema, i: int, n_i: Sequence[int]) -> int:
    if len(n_i) != len(schema.relations[i].members):
        raise ValueError("index tuple length does not match relation arity")
    return _ordinal(bias_spec(schema, i), tuple(n_i))


# -- vectorised class maps (oracle path) ------------------------------------
def _pattern_map(spec: BlockSpec, shape: Sequence[int]) -> np.ndarray:
    ndim = len(shape)
    coords = [np.arange(n).reshape([-1 if a == b else 1 for b in range(ndim)])
              for a, n in enumerate(shape)]
    out = np.zeros([1] * ndim, dtype=np.int64)
    for pos, stride in zip(spec.positions, spec.strides):
        if len(pos) == 1:
            continue
        pairs = list(combinations(range(len(pos)), 2))
        eq = {(a, b): coords[pos[a]] == coords[pos[b]] for a, b in pairs}
        ords = np.zeros([1] * ndim, dtype=np.int64)
        for rank, p in enumerate(enumerate_partitions(len(pos))):
            if rank == 0:
                continue
            hit = np.ones([1] * ndim, dtype=bool)
            for a, b in pairs:
                hit = hit & (eq[a, b] == (p[a] == p[b]))
            ords = ords + rank * hit
        out = out + stride * ords
    return np.broadcast_to(out, tuple(shape))


def class_map(schema: Schema, i: int, j: int) -> np.ndarray:
    """Integer matrix of class ordinals for block (i, j), shape (N_Ri, N_Rj)."""
    si, sj = schema.shape(i), schema.shape(j)
    m = _pattern_map(block_spec(schema, i, j), si + sj)
    return np.ascontiguousarray(m).reshape(prod(si), prod(sj))


def bias_class_map(schema: Schema, i: int) -> np.ndarray:
    """Class ordinal of every bias entry, shaped like relation i's tensor."""
    return np.ascontiguousarray(_pattern_map(bias_spec(schema, i), schema.shape(i)))


# -- subset (pooling) basis --------------------------------------------------
@dataclass(frozen=True)
class SubsetBasis:
    """Subsets of the shared entities of a repeat-free block.

    ``bits[k]`` is the bitmask (over ``shared``) of the pooled subset whose
    coefficient sits at ordinal ``ordinals[k]``; that ordinal is the class
    in which exactly the pooled entities carry the "distinct" pattern.
    """

    shared: tuple[int, ...]
    ordinals: tuple[int, ...]
    bits: tuple[int, ...]
    zeta: np.ndarray = field(compare=False, repr=False)
    mobius: np.ndarray = field(compare=False, repr=False)

    def pooled(self, k: int) -> tuple[int, ...]:
        return tuple(d for b, d in enumerate(self.shared) if self.bits[k] >> b & 1)


@lru_cache(maxsize=None)
def subset_basis(schema: Schema, i: int, j: int) -> SubsetBasis:
    ri, rj = schema.relations[i], schema.relations[j]
    if not (ri.is_set and rj.is_set):
        raise ValueError("subset basis exists only for repeat-free relations")
    spec = block_spec(schema, i, j)
    shared = tuple(d for d in spec.entities if d in ri.counts and d in rj.counts)
    stride = {d: s for d, s in zip(spec.entities, spec.strides)}
    n = 1 << len(shared)
    # arity-2 patterns: (0, 0) -> rank 0 "equal", (0, 1) -> rank 1 "distinct"
    ords = [sum(stride[d] for b, d in enumerate(shared) if m >> b & 1) for m in range(n)]
    order = np.argsort(ords)
    bits = [int(m) for m in order]
    pop = [bin(m).count("1") for m in bits]
    zeta = np.zeros((n, n))
    mob = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            # class with distinct set a receives coefficient of pooled set b iff a <= b
            if bits[a] & ~bits[b] == 0:
                zeta[a, b] = 1.0
            # coefficient b = sum over classes a containing b, alternating sign
            if bits[b] & ~bits[a] == 0:
                mob[b, a] = (-1.0) ** (pop[a] - pop[b])
    return SubsetBasis(shared, tuple(sorted(ords)), tuple(bits), zeta, mob)


def class_to_pool(schema: Schema, i: int, j: int, values: np.ndarray) -> np.ndarray:
    """Class values (class_count, ...) -> pooling coefficients, same shape."""
    basis = subset_basis(schema, i, j)
    return np.tensordot(basis.mobius, values, axes=(1, 0))


def pool_to_class(schema: Schema, i: int, j: int, coefs: np.ndarray) -> np.ndarray:
    basis = subset_basis(schema, i, j)
    return np.tensordot(basis.zeta, coefs, axes=(1, 0))


# -- one-to-many reduction --------------------------------------------------
def one_to_many_merge(schema: Schema, i: int) -> list[tuple[int, int]]:
    """Pooling-basis ordinals of block (i, i) that carry the same information.

    With entity ``d`` annotated ``one``, pooling over all of ``R_i`` and over
    ``R_i - {d}`` see identical data, so their coefficients can be tied.
    """
    rel = schema.relations[i]
    if rel.one is None:
        raise ValueError(f"relation {rel.name!r} has no 'one' annotation")
    if not rel.is_set:
        raise ValueError("one-to-many reduction is only implemented for repeat-free relations")
    basis = subset_basis(schema, i, i)
    full = (1 << len(basis.shared)) - 1
    without = full & ~(1 << basis.shared.index(rel.one))
    ordinal = dict(zip(basis.bits, basis.ordinals))
    return [(ordinal[full], ordinal[without])]


def apply_merge(weights: "TiedWeights", i: int, pairs=None) -> "TiedWeights":
    """Project block (i, i) onto the tied subspace (averaging each pair)."""
    pairs = one_to_many_merge(weights.schema, i) if pairs is None else pairs
    out = weights.copy()
    coefs = class_to_pool(weights.schema, i, i, out.blocks[i, i])
    for a, b in pairs:
        mean = 0.5 * (coefs[a] + coefs[b])
        coefs[a] = mean
        coefs[b] = mean
    out.blocks[i, i] = pool_to_class(weights.schema, i, i, coefs)
    return out


# -- weights ----------------------------------------------------------------
@dataclass
class TiedWeights:
    """Free parameters of one layer: one value per class per channel pair."""

    schema: Schema
    k_in: int
    k_out: int
    blocks: dict[tuple[int, int], np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        s = self.schema
        for i in range(s.n_relations):
            for j in range(s.n_relations):
                want = (num_free_params(s, i, j), self.k_in, self.k_out)
                if self.blocks[i, j].shape != want:
                    raise ValueError(f"block ({i},{j}) has shape {self.blocks[i, j].shape}, want {want}")
            if self.biases[i].shape != (bias_num_params(s, i), self.k_out):
                raise ValueError(f"bias {i} has wrong shape {self.biases[i].shape}")

    @classmethod
    def zeros(cls, schema: Schema, k_in: int = 1, k_out: int = 1) -> "TiedWeights":
        R = range(schema.n_relations)
        blocks = {(i, j): np.zeros((num_free_params(schema, i, j), k_in, k_out)) for i in R for j in R}
        biases = [np.zeros((bias_num_params(schema, i), k_out)) for i in R]
        return cls(schema, k_in, k_out, blocks, biases)

    @classmethod
    def random(cls, schema: Schema, k_in: int = 1, k_out: int = 1, rng=None,
               scale: float = 1.0, integer: bool = False, bias: bool = True) -> "TiedWeights":
        rng = np.random.default_rng(rng)
        w = cls.zeros(schema, k_in, k_out)
        for arr in w.arrays(bias=bias):
            if integer:
                arr[...] = rng.integers(-9, 10, size=arr.shape)
            else:
                arr[...] = rng.uniform(-scale, scale, size=arr.shape)
        return w

    def arrays(self, bias: bool = True) -> Iterator[np.ndarray]:
        """Parameter arrays in canonical order: blocks row-major, then biases."""
        R = range(self.schema.n_relations)
        for i in R:
            for j in R:
                yield self.blocks[i, j]
        if bias:
            yield from self.biases

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> "TiedWeights":
        out = self.copy()
        k = 0
        for a in out.arrays():
            a[...] = np.reshape(vec[k:k + a.size], a.shape)
            k += a.size
        if k != len(vec):
            raise ValueError(f"vector has {len(vec)} entries, weights need {k}")
        return out

    def copy(self) -> "TiedWeights":
        return TiedWeights(self.schema, self.k_in, self.k_out,
                           {k: v.copy() for k, v in self.blocks.items()},
                           [b.copy() for b in self.biases])

    def with_schema(self, schema: Schema) -> "TiedWeights":
        """Reuse the same parameters on another instantiation of the schema."""
        if schema.structure_hash() != self.schema.structure_hash():
            raise ValueError("schema structure differs; weights are not transferable")
        return TiedWeights(schema, self.k_in, self.k_out, self.blocks, self.biases)


def write_weights(w: TiedWeights, fh: TextIO) -> None:
    """Text format: header, then ``block i j count`` / ``bias i count``
    sections (1-based relation numbers), one line per class holding the
    ``k_in * k_out`` channel values row-major."""
    fh.write("# eern-weights 1\n")
    fh.write(f"schema {w.schema.structure_hash()}\n")
    fh.write(f"channels {w.k_in} {w.k_out}\n")
    R = range(w.schema.n_relations)
    for i in R:
        for j in R:
            arr = w.blocks[i, j]
            fh.write(f"block {i + 1} {j + 1} {arr.shape[0]}\n")
            for row in arr.reshape(arr.shape[0], -1):
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    for i in R:
        arr = w.biases[i]
        fh.write(f"bias {i + 1} {arr.shape[0]}\n")
        for row in arr:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_weights(fh: TextIO, schema: Schema) -> TiedWeights:
    lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    it = iter(lines)
    head = next(it).split()
    if head[0] != "schema" or head[1] != schema.structure_hash():
        raise ValueError("weight file was written for a different schema")
    _, k_in, k_out = next(it).split()
    w = TiedWeights.zeros(schema, int(k_in), int(k_out))
    for line in it:
        tok = line.split()
        if tok[0] == "block":
            arr = w.blocks[int(tok[1]) - 1, int(tok[2]) - 1]
        elif tok[0] == "bias":
            arr = w.biases[int(tok[1]) - 1]
        else:
            raise ValueError(f"unexpected line {line!r}")
        if int(tok[-1]) != arr.shape[0]:
            raise ValueError(f"class count mismatch in {line!r}")
        flat = arr.reshape(arr.shape[0], -1)
        for k in range(arr.shape[0]):
            flat[k] = [float(v) for v in next(it).split()]
    return w
