"""Brute-force ground truth for the tied layer.

Everything here is O(N^2) and guarded by ``MAX_DENSE``; it exists to check
the pooled implementation and the tying rules exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence, TextIO

import numpy as np
from scipy.linalg import block_diag

from .relstore import RelInstance
from .schema import Schema
from .tying import TiedWeights, bias_class_map, class_map

MAX_DENSE = 4096


class SizeGuardError(ValueError):
    pass


def _guard(schema: Schema):
    if schema.total_size > MAX_DENSE:
        raise SizeGuardError(f"N = {schema.total_size} exceeds the dense oracle limit {MAX_DENSE}")


@dataclass(frozen=True)
class LegalPerm:
    """One permutation per entity; ``perms[d][n]`` is where instance n goes."""

    perms: dict

    @classmethod
    def identity(cls, schema: Schema) -> "LegalPerm":
        return cls({d: np.arange(n) for d, n in schema.sizes.items()})

    @classmethod
    def random(cls, schema: Schema, rng=None) -> "LegalPerm":
        rng = np.random.default_rng(rng)
        return cls({d: rng.permutation(n) for d, n in schema.sizes.items()})

    @classmethod
    def swap(cls, schema: Schema, entity: int, a: int, b: int) -> "LegalPerm":
        p = cls.identity(schema)
        g = p.perms[entity].copy()
        g[[a, b]] = g[[b, a]]
        return cls({**p.perms, entity: g})

    def __matmul__(self, other: "LegalPerm") -> "LegalPerm":
        # (p @ q)(n) = p(q(n))
        return LegalPerm({d: self.perms[d][other.perms[d]] for d in self.perms})

    def inverse(self) -> "LegalPerm":
        return LegalPerm({d: np.argsort(g) for d, g in self.perms.items()})


def entity_perm_matrix(g: np.ndarray) -> np.ndarray:
    G = np.zeros((len(g), len(g)))
    G[g, np.arange(len(g))] = 1.0
    return G


def perm_matrix(p: LegalPerm, schema: Schema) -> np.ndarray:
    """Direct sum over relations of Kronecker products of entity permutations."""
    _guard(schema)
    blocks = []
    for rel in schema.relations:
        mats = [entity_perm_matrix(p.perms[d]) for d in rel.members]
        blocks.append(reduce(np.kron, mats))
    return block_diag(*blocks)


def apply_perm(p: LegalPerm, x: RelInstance) -> RelInstance:
    """Permute every axis of entity d by ``g^d`` in every tensor."""
    vals, masks = [], []
    inv = {d: np.argsort(g) for d, g in p.perms.items()}
    for rel, v, m in zip(x.schema.relations, x.values, x.masks):
        idx = np.ix_(*[inv[d] for d in rel.members])
        vals.append(v[idx])
        masks.append(m[idx])
    return RelInstance(x.schema, vals, masks)


def permute_array(p: LegalPerm, schema: Schema, i: int, arr: np.ndarray) -> np.ndarray:
    """Apply a legal permutation to one relation's (leading-axes) array."""
    idx = np.ix_(*[np.argsort(p.perms[d]) for d in schema.relations[i].members])
    return arr[idx]


def is_legal(pi: np.ndarray, schema: Schema) -> bool:
    """Whether a permutation of the flat index set lies in the legal group.

    ``pi[n]`` is the image of flat position n.
    """
    pi = np.asarray(pi)
    found: dict[int, np.ndarray] = {}
    for i, rel in enumerate(schema.relations):
        off, size = schema.offsets[i], schema.relation_size(i)
        img = pi[off:off + size] - off
        if (img < 0).any() or (img >= size).any():
            return False
        shape = schema.shape(i)
        src = np.unravel_index(np.arange(size), shape)
        dst = np.unravel_index(img, shape)
        for a, d in enumerate(rel.members):
            g = np.full(shape[a], -1)
            g[src[a]] = dst[a]
            # every source coordinate must map to one image coordinate
            if (g[src[a]] != dst[a]).any() or len(np.unique(g)) != len(g):
                return False
            if d in found and not np.array_equal(found[d], g):
                return False
            found[d] = g
    return True


def random_illegal_perm(schema: Schema, rng=None, max_tries: int = 1000) -> np.ndarray:
    rng = np.random.default_rng(rng)
    for _ in range(max_tries):
        pi = rng.permutation(schema.total_size)
        if not is_legal(pi, schema):
            return pi
    raise RuntimeError("could not sample an illegal permutation")


def flat_perm_matrix(pi: np.ndarray) -> np.ndarray:
    return entity_perm_matrix(np.asarray(pi))


@dataclass
class DenseLayerMatrix:
    matrix: np.ndarray
    offsets: tuple[int, ...]

    def block(self, i: int, j: int) -> np.ndarray:
        o = self.offsets + (self.matrix.shape[0],)
        return self.matrix[o[i]:o[i + 1], o[j]:o[j + 1]]


def class_matrix(schema: Schema) -> np.ndarray:
    """Global class-ordinal matrix: block offsets plus per-block ordinals."""
    _guard(schema)
    R = range(schema.n_relations)
    rows, base = [], 0
    for i in R:
        row = []
        for j in R:
            cm = class_map(schema, i, j)
            row.append(cm + base)
            base += int(cm.max()) + 1
        rows.append(np.hstack(row))
    return np.vstack(rows)


def materialize_W(w: TiedWeights, k_in: int = 0, k_out: int = 0) -> DenseLayerMatrix:
    """Dense N x N matrix for one channel pair (default: the only one)."""
    s = w.schema
    _guard(s)
    R = range(s.n_relations)
    rows = [np.hstack([w.blocks[i, j][:, k_in, k_out][class_map(s, i, j)] for j in R]) for i in R]
    return DenseLayerMatrix(np.vstack(rows), s.offsets)


def materialize_bias(w_or_schema, biases=None, k_out: int = 0) -> np.ndarray:
    if isinstance(w_or_schema, TiedWeights):
        schema, biases = w_or_schema.schema, w_or_schema.biases
    else:
        schema = w_or_schema
    _guard(schema)
    parts = []
    for i in range(schema.n_relations):
        b = np.asarray(biases[i])
        b = b[:, k_out] if b.ndim == 2 else b
        parts.append(b[bias_class_map(schema, i)].ravel())
    return np.concatenate(parts)


def commutation_defect(W, G: np.ndarray) -> float:
    W = W.matrix if isinstance(W, DenseLayerMatrix) else W
    return float(np.abs(W @ G - G @ W).max())


def commutes(W, G: np.ndarray, atol: float = 0.0) -> bool:
    return commutation_defect(W, G) <= atol


def swap_witness(schema: Schema, i: int | None = None) -> np.ndarray:
    """A deterministic illegal flat permutation: swap two cells of one tensor.

    The first cell of tensor ``i`` is exchanged with the nearest later cell
    for which the transposition is not a legal shuffle.  By default ``i`` is
    the first multiset relation (so bias patterns are also broken), else the
    largest relation.
    """
    if i is None:
        multi = [k for k, r in enumerate(schema.relations) if not r.is_set]
        i = multi[0] if multi else max(range(schema.n_relations), key=schema.relation_size)
    off = schema.offsets[i]
    for k in range(1, schema.relation_size(i)):
        pi = np.arange(schema.total_size)
        pi[[off, off + k]] = pi[[off + k, off]]
        if not is_legal(pi, schema):
            return pi
    raise ValueError(f"every transposition in relation {i} is legal")


def forward_dense_oracle(x: RelInstance, w: TiedWeights, act=None) -> RelInstance:
    """sigma(W vec(X) + vec(B)) through dense matrices, any schema."""
    from .eerl import Activation

    act = act or Activation("identity")
    s = x.schema
    _guard(s)
    if x.channels != w.k_in:
        raise ValueError(f"input has {x.channels} channels, weights expect {w.k_in}")
    X = np.concatenate([v.reshape(-1, w.k_in) for v in x.masked()])  # (N, K)
    out = np.zeros((s.total_size, w.k_out))
    for ko in range(w.k_out):
        for ki in range(w.k_in):
            out[:, ko] += materialize_W(w, ki, ko).matrix @ X[:, ki]
        out[:, ko] += materialize_bias(w, k_out=ko)
    out = act(out)
    vals, k = [], 0
    for i in range(s.n_relations):
        n = s.relation_size(i)
        vals.append(out[k:k + n].reshape(s.shape(i) + (w.k_out,)))
        k += n
    return RelInstance(s, vals, x.masks)


def recursive_block(sizes: Sequence[int], params) -> np.ndarray:
    """Build ``W_k = W_{k-1} (x) 1 + V_{k-1} (x) I`` over distinct entities.

    ``params`` has shape ``(2,) * len(sizes)``; its last axis picks the
    all-ones (0) or identity (1) factor for the last entity, and so on.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (2,) * len(sizes):
        raise ValueError(f"need params of shape {(2,) * len(sizes)}, got {params.shape}")
    if not sizes:
        return params.reshape(1, 1)
    n = sizes[-1]
    return (np.kron(recursive_block(sizes[:-1], params[..., 0]), np.ones((n, n)))
            + np.kron(recursive_block(sizes[:-1], params[..., 1]), np.eye(n)))


def recursive_block_for(schema: Schema, entities: Sequence[int], params) -> np.ndarray:
    if len(set(entities)) != len(entities):
        raise ValueError("recursive form needs distinct entities")
    return recursive_block([schema.sizes[d] for d in entities], params)


def same_pattern(a: np.ndarray, b: np.ndarray) -> bool:
    """True when equal entries of ``a`` are exactly the equal entries of ``b``."""
    if a.shape != b.shape:
        return False
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    pairs = np.unique(np.stack([ia.ravel(), ib.ravel()]), axis=1)
    return pairs.shape[1] == ia.max() + 1 == ib.max() + 1


# -- pattern dump ----------------------------------------------------------
def write_pgm(classes: np.ndarray, fh: TextIO) -> None:
    h, w = classes.shape
    maxval = max(int(classes.max()), 1)
    fh.write(f"P2\n{w} {h}\n{maxval}\n")
    for row in classes:
        fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_pgm(fh: TextIO) -> np.ndarray:
    tokens = []
    for line in fh:
        tokens += line.split("#", 1)[0].split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM (P2) file")
    w, h, maxval = (int(t) for t in tokens[1:4])
    data = np.array([int(t) for t in tokens[4:]])
    if data.size != w * h or (data > maxval).any() or (data < 0).any():
        raise ValueError("PGM body does not match its header")
    return data.reshape(h, w)


def block_distinct_counts(matrix: np.ndarray, schema: Schema) -> dict[tuple[int, int], int]:
    o = schema.offsets + (schema.total_size,)
    R = range(schema.n_relations)
    return {(i, j): len(np.unique(matrix[o[i]:o[i + 1], o[j]:o[j + 1]])) for i in R for j in R}
