import itertools

import numpy as np
import pytest

from eern.schema import EXAMPLE_SCHEMA, parse_schema


@pytest.fixture
def example():
    """student 5 / course 4 / prof 3 with takes, prereq (course course), refs."""
    return parse_schema(EXAMPLE_SCHEMA)


def equality_key(entities, values):
    """Pairwise same-entity equality flags of a concatenated index tuple."""
    pos = range(len(values))
    return tuple(values[p] == values[q] for p, q in itertools.combinations(pos, 2)
                 if entities[p] == entities[q])


def brute_classes(schema, i, j):
    """Class labels of block (i, j) by pairwise equality flags (no partitions code)."""
    ri, rj = schema.relations[i], schema.relations[j]
    ents = list(ri.members) + list(rj.members)
    rows = list(itertools.product(*[range(n) for n in schema.shape(i)]))
    cols = list(itertools.product(*[range(n) for n in schema.shape(j)]))
    keys, out = {}, np.zeros((len(rows), len(cols)), dtype=int)
    for a, r in enumerate(rows):
        for b, c in enumerate(cols):
            out[a, b] = keys.setdefault(equality_key(ents, r + c), len(keys))
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
