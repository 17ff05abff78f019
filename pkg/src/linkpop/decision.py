"""Loss functions over matching matrices, the Bayes-optimal point estimate
built from marginal match probabilities, and false-match-rate metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .core import MatchingMatrix

LOSS_KINDS = ("quadratic", "abs", "fmr", "tot")


@dataclass(frozen=True)
class PairPosterior:
    """Marginal posterior match probabilities; absent pairs have probability 0."""

    n_a: int
    n_b: int
    probs: Mapping[tuple[int, int], float]

    def __post_init__(self):
        clean = {}
        for (a, b), p in self.probs.items():
            p = float(p)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} for pair ({a},{b}) outside [0,1]")
            if not (1 <= a <= self.n_a and 1 <= b <= self.n_b):
                raise ValueError(f"pair ({a},{b}) outside the {self.n_a}x{self.n_b} grid")
            if p > 0.0:
                clean[(int(a), int(b))] = p
        object.__setattr__(self, "probs", clean)

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "PairPosterior":
        n_a, n_b = mat.shape
        probs = {
            (int(a) + 1, int(b) + 1): float(mat[a, b])
            for a, b in zip(*np.nonzero(mat))
        }
        return cls(n_a, n_b, probs)

    def get(self, a: int, b: int) -> float:
        return self.probs.get((a, b), 0.0)


def _check_dims(c: MatchingMatrix, g: MatchingMatrix) -> None:
    if (c.n_a, c.n_b) != (g.n_a, g.n_b):
        raise ValueError(
            f"matrix dimensions differ: {c.n_a}x{c.n_b} vs {g.n_a}x{g.n_b}"
        )


def loss(kind: str, c_true: MatchingMatrix, g: MatchingMatrix) -> float:
    """Evaluate one of the supported losses of an action matrix against the
    true matching."""
    _check_dims(c_true, g)
    false_matches = len(g.pairs - c_true.pairs)
    missed = len(c_true.pairs - g.pairs)
    if kind in ("quadratic", "abs"):
        # on 0/1 matrices the squared and absolute error counts coincide
        return float(false_matches + missed)
    if kind == "fmr":
        return false_matches / g.T if g.T else 0.0
    if kind == "tot":
        fmr = false_matches / g.T if g.T else 0.0
        non_declared = c_true.n_a * c_true.n_b - g.T
        return fmr + (missed / non_declared if non_declared else 0.0)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


class BayesEstimate(NamedTuple):
    estimate: MatchingMatrix
    conflicts_resolved: bool


def bayes_estimate(post: PairPosterior) -> BayesEstimate:
    """Point estimate optimal under quadratic (equivalently absolute-error)
    loss: declare every pair with marginal probability above 1/2.

    Marginals of a one-to-one constrained posterior can never place two
    entries above 1/2 in the same row or column; if an incoherent input
    (e.g. unconstrained plug-in probabilities) does, the higher-probability
    pair wins, ties broken lexicographically, and the event is flagged.
    """
    above = sorted(
        ((p, a, b) for (a, b), p in post.probs.items() if p > 0.5),
        key=lambda x: (-x[0], x[1], x[2]),
    )
    taken_rows: set[int] = set()
    taken_cols: set[int] = set()
    pairs = []
    conflicts = False
    for p, a, b in above:
        if a in taken_rows or b in taken_cols:
            conflicts = True
            continue
        taken_rows.add(a)
        taken_cols.add(b)
        pairs.append((a, b))
    return BayesEstimate(
        MatchingMatrix(post.n_a, post.n_b, frozenset(pairs)), conflicts
    )


def expected_quadratic_loss(post: PairPosterior, g: MatchingMatrix) -> float:
    """Posterior expectation of the quadratic loss of an action matrix;
    depends on the posterior only through its marginals."""
    if (g.n_a, g.n_b) != (post.n_a, post.n_b):
        raise ValueError("dimension mismatch")
    total = sum(post.probs.values())
    return float(total + sum(1.0 - 2.0 * post.get(a, b) for a, b in g.pairs))


def error_rates(c_true: MatchingMatrix, c_hat: MatchingMatrix) -> tuple[float, float]:
    """(FMR1, FMR2): share of declared matches that are false, and share of
    true matches that were missed. Empty denominators give 0."""
    _check_dims(c_true, c_hat)
    false_matches = len(c_hat.pairs - c_true.pairs)
    missed = len(c_true.pairs - c_hat.pairs)
    fmr1 = false_matches / c_hat.T if c_hat.T else 0.0
    fmr2 = missed / c_true.T if c_true.T else 0.0
    return fmr1, fmr2
