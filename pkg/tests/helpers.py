"""Shared enumeration oracles for the test suite: exhaustive matchings,
composition generators and small-state utilities. Everything here is
deliberately brute force and independent of the library's own combinatorics."""

from __future__ import annotations

import itertools

import numpy as np

from linkpop.core import FrequencyVector, KeySchema, MatchingMatrix, RecordTable


def all_matchings(n_a: int, n_b: int) -> list[MatchingMatrix]:
    """Every 0/1 matrix with at most one match per row and column."""
    out = []
    rows = list(range(1, n_a + 1))
    cols = list(range(1, n_b + 1))
    for size in range(0, min(n_a, n_b) + 1):
        for row_subset in itertools.combinations(rows, size):
            for col_perm in itertools.permutations(cols, size):
                out.append(
                    MatchingMatrix(n_a, n_b, frozenset(zip(row_subset, col_perm)))
                )
    return out


def compositions(total: int, parts: int):
    """All nonnegative integer vectors of the given length summing to total."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in compositions(total - head, parts - 1):
            yield (head, *rest)


def boxed_vectors(limits):
    """All integer vectors with 0 <= v_i <= limits[i]."""
    return itertools.product(*[range(limit + 1) for limit in limits])


def table_from_cells(cells, schema: KeySchema, label: str = "") -> RecordTable:
    arr = np.asarray(cells, dtype=np.int64)
    return RecordTable(schema.codes_of(arr), label=label)


def freq_from_vector(vec) -> FrequencyVector:
    return FrequencyVector({j + 1: int(c) for j, c in enumerate(vec) if c})


def total_variation(empirical: dict, exact: dict) -> float:
    keys = set(empirical) | set(exact)
    return 0.5 * sum(abs(empirical.get(k, 0.0) - exact.get(k, 0.0)) for k in keys)
