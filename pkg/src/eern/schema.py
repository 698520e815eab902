"""Entities, (multiset) relations and the schema text format.

A schema file is line oriented::

    # running example
    entity student 5
    entity course 4
    relation takes student course
    relation prereq course course
    relation teaches course professor one professor

Entity ids are assigned 1..D in declaration order.  A relation's member
order fixes the axis order of its tensor.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import prod
from typing import Iterable, Mapping, Sequence, Union

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class SchemaError(ValueError):
    """Raised for malformed schema text or inconsistent declarations."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class EntityDecl:
    id: int
    name: str
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise SchemaError(f"entity {self.name!r} needs count >= 1, got {self.count}")


@dataclass(frozen=True)
class Relation:
    """A relation over entity ids; repeated ids make it a multiset."""

    id: int
    name: str
    members: tuple[int, ...]
    one: int | None = None

    def __post_init__(self):
        if not self.members:
            raise SchemaError(f"relation {self.name!r} has no members")
        if self.one is not None and self.one not in self.members:
            raise SchemaError(f"relation {self.name!r}: 'one' entity is not a member")

    @cached_property
    def counts(self) -> dict[int, int]:
        return dict(sorted(Counter(self.members).items()))

    @property
    def distinct(self) -> tuple[int, ...]:
        return tuple(self.counts)

    @property
    def is_set(self) -> bool:
        return len(self.distinct) == len(self.members)

    def axes_of(self, entity: int) -> tuple[int, ...]:
        return tuple(a for a, d in enumerate(self.members) if d == entity)


@dataclass(frozen=True)
class Schema:
    entities: tuple[EntityDecl, ...]
    relations: tuple[Relation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ids = [e.id for e in self.entities]
        if ids != list(range(1, len(ids) + 1)):
            raise SchemaError("entity ids must be 1..D in order")
        names = [e.name for e in self.entities]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate entity name")
        rnames = [r.name for r in self.relations]
        if len(set(rnames)) != len(rnames):
            raise SchemaError("duplicate relation name")
        for r in self.relations:
            for d in r.members:
                if not 1 <= d <= len(ids):
                    raise SchemaError(f"relation {r.name!r} references undeclared entity {d}")

    # -- lookups -----------------------------------------------------------
    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def sizes(self) -> dict[int, int]:
        """Instance count N_d per entity id."""
        return {e.id: e.count for e in self.entities}

    def entity(self, key: Union[int, str]) -> EntityDecl:
        if isinstance(key, str):
            for e in self.entities:
                if e.name == key:
                    return e
            raise KeyError(f"no entity named {key!r}")
        return self.entities[key - 1]

    def relation_index(self, key: Union[int, str]) -> int:
        if isinstance(key, str):
            for r in self.relations:
                if r.name == key:
                    return r.id
            raise KeyError(f"no relation named {key!r}")
        if not 0 <= key < self.n_relations:
            raise IndexError(f"relation index {key} out of range")
        return key

    def relation(self, key: Union[int, str]) -> Relation:
        return self.relations[self.relation_index(key)]

    def shape(self, i: int) -> tuple[int, ...]:
        sizes = self.sizes
        return tuple(sizes[d] for d in self.relations[i].members)

    def relation_size(self, i: int) -> int:
        return prod(self.shape(i))

    @property
    def total_size(self) -> int:
        return sum(self.relation_size(i) for i in range(self.n_relations))

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for i in range(self.n_relations):
            out.append(acc)
            acc += self.relation_size(i)
        return tuple(out)

    @property
    def repeat_free(self) -> bool:
        return all(r.is_set for r in self.relations)

    def with_counts(self, counts: Union[Mapping[int, int], Sequence[int]]) -> "Schema":
        """Same entities/relations with different instance counts."""
        if not isinstance(counts, Mapping):
            counts = {i + 1: c for i, c in enumerate(counts)}
        ents = tuple(replace(e, count=int(counts.get(e.id, e.count))) for e in self.entities)
        return Schema(ents, self.relations)

    # -- text form ---------------------------------------------------------
    def render(self) -> str:
        lines = [f"entity {e.name} {e.count}" for e in self.entities]
        for r in self.relations:
            members = " ".join(self.entities[d - 1].name for d in r.members)
            line = f"relation {r.name} {members}"
            if r.one is not None:
                line += f" one {self.entities[r.one - 1].name}"
            lines.append(line)
        return "\n".join(lines) + "\n"

    def structure_hash(self) -> str:
        """Hash of the entity/relation structure, ignoring instance counts.

        Weights do not depend on N_d, so a weight file stays valid for
        another instantiation of the same schema.
        """
        parts = [e.name for e in self.entities]
        parts += [f"{r.name}:{r.members}:{r.one}" for r in self.relations]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def parse_schema(text: str) -> Schema:
    entities: list[EntityDecl] = []
    by_name: dict[str, int] = {}
    relations: list[Relation] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) > 1 and not _NAME.match(tok[1]):
            raise SchemaError(f"bad name {tok[1]!r}", lineno)
        if tok[0] == "entity":
            if len(tok) != 3:
                raise SchemaError("expected 'entity <name> <count>'", lineno)
            name = tok[1]
            try:
                count = int(tok[2])
            except ValueError:
                raise SchemaError(f"count must be an integer, got {tok[2]!r}", lineno) from None
            if count < 1:
                raise SchemaError(f"count must be >= 1, got {count}", lineno)
            if name in by_name:
                raise SchemaError(f"duplicate entity {name!r}", lineno)
            by_name[name] = len(entities) + 1
            entities.append(EntityDecl(len(entities) + 1, name, count))
        elif tok[0] == "relation":
            if len(tok) < 3:
                raise SchemaError("expected 'relation <name> <entity>...'", lineno)
            name, rest = tok[1], tok[2:]
            one = None
            if "one" in rest and "one" not in by_name:
                k = rest.index("one")
                if k != len(rest) - 2:
                    raise SchemaError("'one <entity>' must end the relation line", lineno)
                one_name = rest[k + 1]
                rest = rest[:k]
                if one_name not in by_name:
                    raise SchemaError(f"undeclared entity {one_name!r}", lineno)
                one = by_name[one_name]
            members = []
            for m in rest:
                if m not in by_name:
                    raise SchemaError(f"undeclared entity {m!r}", lineno)
                members.append(by_name[m])
            if not members:
                raise SchemaError("relation needs at least one entity", lineno)
            if one is not None and one not in members:
                raise SchemaError(f"'one' entity {entities[one - 1].name!r} is not a member", lineno)
            if any(r.name == name for r in relations):
                raise SchemaError(f"duplicate relation {name!r}", lineno)
            relations.append(Relation(len(relations), name, tuple(members), one))
        else:
            raise SchemaError(f"unknown statement {tok[0]!r}", lineno)
    if not entities:
        raise SchemaError("schema declares no entities")
    return Schema(tuple(entities), tuple(relations))


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read())


def make_schema(counts: Sequence[int], relations: Iterable[Sequence[int]], names=None) -> Schema:
    """Build a schema from instance counts and member-id tuples (1-based)."""
    ents = tuple(EntityDecl(i + 1, f"e{i + 1}", int(c)) for i, c in enumerate(counts))
    rels = []
    for k, members in enumerate(relations):
        name = names[k] if names else f"r{k + 1}"
        rels.append(Relation(k, name, tuple(int(m) for m in members)))
    return Schema(ents, tuple(rels))


# -- multiset algebra ------------------------------------------------------
MultisetLike = Union[Relation, Mapping[int, int], Iterable[int]]


def _as_counts(a: MultisetLike) -> Counter:
    if isinstance(a, Relation):
        return Counter(a.members)
    if isinstance(a, Mapping):
        return Counter({k: v for k, v in a.items() if v > 0})
    return Counter(a)


def multiset_union(a: MultisetLike, b: MultisetLike) -> dict[int, int]:
    """Counts add per entity."""
    return dict(sorted((_as_counts(a) + _as_counts(b)).items()))


def multiset_intersection(a: MultisetLike, b: MultisetLike) -> dict[int, int]:
    """Counts take the per-entity minimum; zero counts drop out."""
    return dict(sorted((_as_counts(a) & _as_counts(b)).items()))


EXAMPLE_SCHEMA = """\
entity student 5
entity course 4
entity prof 3
relation takes student course
relation prereq course course
relation refs student prof
"""
