import pytest
from hypothesis import given, strategies as st

from eern.schema import (Relation, SchemaError, load_schema, make_schema, multiset_intersection,
                         multiset_union, parse_schema)


def test_parse_example(example):
    assert example.n_entities == 3
    assert [r.members for r in example.relations] == [(1, 2), (2, 2), (1, 3)]
    assert example.sizes == {1: 5, 2: 4, 3: 3}


def test_minimal_schema():
    s = parse_schema("entity a 1\nrelation r a\n")
    assert s.n_entities == 1 and s.total_size == 1


def test_undeclared_entity():
    with pytest.raises(SchemaError, match="undeclared entity"):
        parse_schema("relation r x\n")


@pytest.mark.parametrize("text, fragment", [
    ("entity a\n", "line 1"),
    ("entity a 0\n", "line 1"),
    ("entity a 2\nentity a 3\n", "line 2"),
    ("entity a 2\nrelation r\n", "line 2"),
    ("entity 9a 2\n", "line 1"),
    ("banana\n", "line 1"),
])
def test_malformed_lines(text, fragment):
    with pytest.raises(SchemaError, match=fragment):
        parse_schema(text)


def test_comments_and_one_marker():
    s = parse_schema("# c\nentity a 3 # trailing\nentity b 2\nrelation r a b one b\n")
    assert s.relations[0].one == 2


def test_sizes(example):
    assert example.relation_size(0) == 20
    assert example.relation_size(1) == 16
    assert example.relation_size(2) == 15
    assert example.total_size == 51
    assert example.offsets == (0, 20, 36)
    assert make_schema([7], [[1]]).total_size == 7
    assert make_schema([3, 4], [[1, 2], [1, 2]]).total_size == 2 * 3 * 4


def test_render_round_trip(example):
    assert parse_schema(example.render()) == example
    s = parse_schema("entity a 3\nentity b 2\nrelation r a b one b\n")
    assert parse_schema(s.render()) == s


def test_load_schema(tmp_path, example):
    p = tmp_path / "s.txt"
    p.write_text(example.render())
    assert load_schema(p) == example


def test_with_counts_keeps_structure(example):
    big = example.with_counts([50, 40, 30])
    assert big.sizes == {1: 50, 2: 40, 3: 30}
    assert big.structure_hash() == example.structure_hash()
    assert big != example


def test_multiset_examples():
    assert multiset_union((1, 2), (2, 2)) == {1: 1, 2: 3}
    assert multiset_union((1,), (2,)) == {1: 1, 2: 1}
    assert multiset_union((1, 3), ()) == {1: 1, 3: 1}
    assert multiset_intersection((1, 2), (2, 2)) == {2: 1}
    assert multiset_intersection((1, 3), (2, 2)) == {}
    assert multiset_intersection((1, 2, 2), (1, 2, 2)) == {1: 1, 2: 2}
    r = Relation(0, "r", (1, 2))
    assert multiset_union(r, {2: 1}) == {1: 1, 2: 2}


ms = st.lists(st.integers(1, 4), max_size=5)


@given(ms, ms, ms)
def test_multiset_algebra(a, b, c):
    assert multiset_union(a, b) == multiset_union(b, a)
    assert multiset_intersection(a, b) == multiset_intersection(b, a)
    assert multiset_union(multiset_union(a, b), c) == multiset_union(a, multiset_union(b, c))
    assert (multiset_intersection(multiset_intersection(a, b), c)
            == multiset_intersection(a, multiset_intersection(b, c)))


@given(st.lists(st.integers(1, 5), min_size=1, max_size=3),
       st.lists(st.lists(st.integers(1, 3), min_size=1, max_size=3), min_size=1, max_size=3))
def test_total_size_recomputed(counts, rels):
    rels = [[min(d, len(counts)) for d in r] for r in rels]
    s = make_schema(counts, rels)
    expect = 0
    for r in rels:
        size = 1
        for d in r:
            size *= counts[d - 1]
        expect += size
    assert s.total_size == expect == sum(s.relation_size(i) for i in range(s.n_relations))
