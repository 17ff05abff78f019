"""Domain types shared by every stage: key-variable schemas, record tables,
cell indexing, sparse frequency vectors, matching matrices and latent states.

Category codes are 1-based everywhere in the public API; a record with codes
(j_1, ..., j_h) occupies the cell whose index is the lexicographic rank of
the tuple, also 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np


class SchemaError(ValueError):
    """A code, cell index or pattern violates the declared schema."""


class InconsistentStateError(RuntimeError):
    """A latent state violates the structural constraints of the model."""


def _as_code_matrix(codes) -> np.ndarray:
    arr = np.asarray(codes, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise SchemaError(f"code matrix must be 2-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class KeySchema:
    """Declared key variables: category counts and the independence pattern
    used at the superpopulation level (one Dirichlet block per group)."""

    k: tuple[int, ...]
    independence_pattern: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        if len(self.k) < 1:
            raise SchemaError("need at least one key variable")
        if any(int(ki) < 2 for ki in self.k):
            raise SchemaError(f"every category count must be >= 2, got {self.k}")
        object.__setattr__(self, "k", tuple(int(ki) for ki in self.k))
        pattern = self.independence_pattern
        if not pattern:
            pattern = tuple((i,) for i in range(1, self.h + 1))
        pattern = tuple(tuple(sorted(int(v) for v in group)) for group in pattern)
        seen = [v for group in pattern for v in group]
        if sorted(seen) != list(range(1, self.h + 1)):
            raise SchemaError(
                f"independence pattern {pattern} is not a partition of 1..{self.h}"
            )
        object.__setattr__(self, "independence_pattern", pattern)

    @property
    def h(self) -> int:
        return len(self.k)

    @property
    def K(self) -> int:
        return int(np.prod([int(ki) for ki in self.k], dtype=object))

    @property
    def strides(self) -> tuple[int, ...]:
        """Mixed-radix strides: last variable varies fastest."""
        s = [1] * self.h
        for i in range(self.h - 2, -1, -1):
            s[i] = s[i + 1] * self.k[i + 1]
        return tuple(s)

    def check_codes(self, codes) -> np.ndarray:
        arr = _as_code_matrix(codes)
        if arr.shape[1] != self.h:
            raise SchemaError(f"expected {self.h} fields per record, got {arr.shape[1]}")
        kvec = np.asarray(self.k, dtype=np.int64)
        if np.any(arr < 1) or np.any(arr > kvec):
            bad = np.argwhere((arr < 1) | (arr > kvec))[0]
            raise SchemaError(
                f"code {arr[bad[0], bad[1]]} out of range 1..{self.k[bad[1]]} "
                f"for variable {bad[1] + 1}"
            )
        return arr

    def cells_of(self, codes) -> np.ndarray:
        """Lexicographic cell indices (1-based) for a matrix of code rows."""
        arr = self.check_codes(codes)
        strides = np.asarray(self.strides, dtype=np.int64)
        return (arr - 1) @ strides + 1

    def codes_of(self, cells) -> np.ndarray:
        """Inverse of :meth:`cells_of`: decode cell indices to code rows."""
        j = np.asarray(cells, dtype=np.int64)
        scalar = j.ndim == 0
        j = np.atleast_1d(j)
        if np.any(j < 1) or np.any(j > self.K):
            raise SchemaError(f"cell index out of range 1..{self.K}")
        rem = j - 1
        out = np.empty((j.shape[0], self.h), dtype=np.int64)
        for i, stride in enumerate(self.strides):
            out[:, i] = rem // stride + 1
            rem = rem % stride
        return out[0] if scalar else out


def cell_of(codes_row: Sequence[int], schema: KeySchema) -> int:
    """Lexicographic rank (1-based) of one code tuple."""
    return int(schema.cells_of(np.asarray(codes_row).reshape(1, -1))[0])


def tuple_of(j: int, schema: KeySchema) -> tuple[int, ...]:
    """Code tuple of cell index ``j``; inverse of :func:`cell_of`."""
    return tuple(int(c) for c in schema.codes_of(j))


@dataclass(frozen=True)
class RecordTable:
    """One observed (or latent true-value) file: n units by h category codes."""

    codes: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "codes", _as_code_matrix(self.codes))

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def h(self) -> int:
        return self.codes.shape[1]

    def validate(self, schema: KeySchema) -> None:
        if self.n:
            schema.check_codes(self.codes)
        elif self.codes.shape[1] not in (0, schema.h):
            raise SchemaError("field count does not match schema")


class FrequencyVector:
    """Sparse nonnegative counts per cell index; absent cells are zero."""

    __slots__ = ("_counts",)

    def __init__(self, counts: Mapping[int, int] | None = None):
        self._counts: dict[int, int] = {}
        if counts:
            for j, c in counts.items():
                c = int(c)
                if c < 0:
                    raise ValueError(f"negative count {c} for cell {j}")
                if c:
                    self._counts[int(j)] = c

    @classmethod
    def from_cells(cls, cells: Iterable[int]) -> "FrequencyVector":
        fv = cls()
        for j in cells:
            fv.add(int(j))
        return fv

    @property
    def total(self) -> int:
        return sum(self._counts.values())

    def get(self, j: int) -> int:
        return self._counts.get(int(j), 0)

    def add(self, j: int, count: int = 1) -> None:
        j = int(j)
        new = self._counts.get(j, 0) + count
        if new < 0:
            raise ValueError(f"count for cell {j} would become negative")
        if new:
            self._counts[j] = new
        else:
            self._counts.pop(j, None)

    def remove(self, j: int, count: int = 1) -> None:
        self.add(j, -count)

    def items(self) -> list[tuple[int, int]]:
        return sorted(self._counts.items())

    def cells(self) -> list[int]:
        return sorted(self._counts)

    def copy(self) -> "FrequencyVector":
        return FrequencyVector(self._counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, FrequencyVector) and self._counts == other._counts

    def __len__(self) -> int:
        return len(self._counts)

    def __repr__(self) -> str:
        return f"FrequencyVector({dict(self.items())})"


def frequencies(table: RecordTable, schema: KeySchema) -> FrequencyVector:
    """Cell counts of a table of true values (f^S for file S)."""
    if table.n == 0:
        return FrequencyVector()
    return FrequencyVector.from_cells(schema.cells_of(table.codes))


@dataclass(frozen=True)
class MatchingMatrix:
    """Sparse 0/1 matching matrix: at most one partner per row and column."""

    n_a: int
    n_b: int
    pairs: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "pairs", frozenset((int(a), int(b)) for a, b in self.pairs)
        )
        rows = [a for a, _ in self.pairs]
        cols = [b for _, b in self.pairs]
        if rows and (min(rows) < 1 or max(rows) > self.n_a):
            raise ValueError(f"row index out of range 1..{self.n_a}")
        if cols and (min(cols) < 1 or max(cols) > self.n_b):
            raise ValueError(f"column index out of range 1..{self.n_b}")
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("multiple matches for a single record are not allowed")

    @property
    def T(self) -> int:
        return len(self.pairs)

    def sorted_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.pairs)

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.n_a, self.n_b), dtype=np.int8)
        for a, b in self.pairs:
            m[a - 1, b - 1] = 1
        return m


def t_from(
    mu_a: RecordTable, mu_b: RecordTable, C: MatchingMatrix, schema: KeySchema
) -> FrequencyVector:
    """Per-cell match counts implied by the true values and the matching matrix."""
    t = FrequencyVector()
    if not C.pairs:
        return t
    cells_a = schema.cells_of(mu_a.codes)
    cells_b = schema.cells_of(mu_b.codes)
    for a, b in C.sorted_pairs():
        ja, jb = int(cells_a[a - 1]), int(cells_b[b - 1])
        if ja != jb:
            raise InconsistentStateError(
                f"matched pair ({a},{b}) has unequal true values (cells {ja} vs {jb})"
            )
        t.add(ja)
    return t


class ThetaBlocks:
    """Superpopulation cell probabilities stored per Dirichlet block.

    Each group of the independence pattern carries one probability vector over
    the group's joint support (lexicographic in the group's variables); the
    probability of a full cell is the product across groups.
    """

    def __init__(self, schema: KeySchema, probs: Sequence[np.ndarray] | None = None):
        self.schema = schema
        self.groups = schema.independence_pattern
        self._sizes = [
            int(np.prod([schema.k[v - 1] for v in group])) for group in self.groups
        ]
        if probs is None:
            probs = [np.full(size, 1.0 / size) for size in self._sizes]
        self.probs = [np.asarray(p, dtype=float) for p in probs]
        for p, size in zip(self.probs, self._sizes):
            if p.shape != (size,):
                raise SchemaError(f"block vector has length {p.shape}, expected {size}")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise SchemaError("block probabilities must be nonnegative and sum to 1")

    @property
    def group_sizes(self) -> list[int]:
        return list(self._sizes)

    def group_strides(self, g: int) -> np.ndarray:
        ks = [self.schema.k[v - 1] for v in self.groups[g]]
        s = [1] * len(ks)
        for i in range(len(ks) - 2, -1, -1):
            s[i] = s[i + 1] * ks[i + 1]
        return np.asarray(s, dtype=np.int64)

    def group_indices(self, codes: np.ndarray, g: int) -> np.ndarray:
        """0-based joint index within group g for each code row."""
        cols = [v - 1 for v in self.groups[g]]
        return (codes[:, cols] - 1) @ self.group_strides(g)

    def cell_probs(self, codes: np.ndarray) -> np.ndarray:
        """Cell probability for each code row (product across groups)."""
        codes = _as_code_matrix(codes)
        out = np.ones(codes.shape[0])
        for g in range(len(self.groups)):
            out *= self.probs[g][self.group_indices(codes, g)]
        return out

    def expand(self) -> np.ndarray:
        """Dense probability vector over all K cells (small K only)."""
        all_codes = self.schema.codes_of(np.arange(1, self.schema.K + 1))
        return self.cell_probs(all_codes)

    def margin(self, variable: int, value: int) -> float:
        """Marginal probability P(X_variable = value)."""
        for g, group in enumerate(self.groups):
            if variable in group:
                pos = group.index(variable)
                stride = int(self.group_strides(g)[pos])
                k_v = self.schema.k[variable - 1]
                idx = np.arange(self._sizes[g], dtype=np.int64)
                coord = (idx // stride) % k_v + 1
                return float(self.probs[g][coord == value].sum())
        raise SchemaError(f"variable {variable} not in schema")

    def draw_codes(self, m: int, rng: np.random.Generator) -> np.ndarray:
        """Draw m iid code rows from the product distribution."""
        out = np.empty((m, self.schema.h), dtype=np.int64)
        if m == 0:
            return out
        for g, group in enumerate(self.groups):
            cum = np.cumsum(self.probs[g])
            cum[-1] = 1.0
            idx = np.searchsorted(cum, rng.random(m), side="right")
            strides = self.group_strides(g)
            for pos, v in enumerate(group):
                k_v = self.schema.k[v - 1]
                out[:, v - 1] = (idx // strides[pos]) % k_v + 1
        return out

    def copy(self) -> "ThetaBlocks":
        return ThetaBlocks(self.schema, [p.copy() for p in self.probs])


@dataclass
class LatentState:
    """One configuration of all latent quantities of the hierarchical model."""

    mu_a: RecordTable
    mu_b: RecordTable
    t: FrequencyVector
    F: FrequencyVector
    N: int
    theta: ThetaBlocks
    beta: np.ndarray
    C: MatchingMatrix | None = None

    def validate(self, schema: KeySchema) -> None:
        self.mu_a.validate(schema)
        self.mu_b.validate(schema)
        f_a = frequencies(self.mu_a, schema)
        f_b = frequencies(self.mu_b, schema)
        for j, tj in self.t.items():
            if not 0 <= tj <= min(f_a.get(j), f_b.get(j)):
                raise InconsistentStateError(
                    f"t_{j}={tj} outside [0, min(f^A_{j}, f^B_{j})]"
                )
        for j in set(f_a.cells()) | set(f_b.cells()):
            if max(f_a.get(j), f_b.get(j)) > self.F.get(j):
                raise InconsistentStateError(
                    f"sample count exceeds population count in cell {j}"
                )
        if self.F.total != self.N:
            raise InconsistentStateError("F does not sum to N")
        if self.N < max(self.mu_a.n, self.mu_b.n):
            raise InconsistentStateError("N smaller than a sample size")
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape not in ((schema.h,), (2, schema.h)):
            raise InconsistentStateError(
                "beta must hold h probabilities (shared) or 2 x h (per file)"
            )
        if np.any(beta < 0) or np.any(beta > 1):
            raise InconsistentStateError("beta values must lie in [0,1]")
        for p in self.theta.probs:
            if abs(p.sum() - 1.0) > 1e-12:
                raise InconsistentStateError("theta block does not sum to 1")
        if self.C is not None:
            if t_from(self.mu_a, self.mu_b, self.C, schema) != self.t:
                raise InconsistentStateError("C does not reproduce t")
