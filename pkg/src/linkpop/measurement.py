"""Hit-miss measurement-error model: each field is recorded correctly with
probability beta_i and is otherwise replaced by a uniform draw over the
variable's categories (which may reproduce the true value by chance)."""

from __future__ import annotations

import numpy as np

from .core import KeySchema, RecordTable


def component_prob(x_code: int, mu_code: int, beta_i: float, k_i: int) -> float:
    """P(observed = x | true = mu) for one field."""
    return beta_i * (x_code == mu_code) + (1.0 - beta_i) / k_i


def record_loglik(x_row, mu_row, beta, schema: KeySchema) -> float:
    """Log-probability of one observed record given its true values,
    summed over conditionally independent fields."""
    x = schema.check_codes(np.asarray(x_row).reshape(1, -1))[0]
    mu = schema.check_codes(np.asarray(mu_row).reshape(1, -1))[0]
    beta = np.asarray(beta, dtype=float)
    k = np.asarray(schema.k, dtype=float)
    probs = beta * (x == mu) + (1.0 - beta) / k
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(probs)))


def likelihood_matrix(
    x_codes: np.ndarray, cand_codes: np.ndarray, beta: np.ndarray, k: np.ndarray
) -> np.ndarray:
    """(n, m) matrix of P(x_row | candidate true-value row) over all pairs."""
    n, h = x_codes.shape
    m = cand_codes.shape[0]
    out = np.ones((n, m))
    for i in range(h):
        agree = x_codes[:, i, None] == cand_codes[None, :, i]
        out *= beta[i] * agree + (1.0 - beta[i]) / k[i]
    return out


def hit_count(x_codes: np.ndarray, mu_codes: np.ndarray, i: int) -> int:
    """Number of units whose observed and true values coincide on variable i
    (1-based). Callers stack both files to count jointly."""
    return int(np.count_nonzero(x_codes[:, i - 1] == mu_codes[:, i - 1]))


def corrupt(
    mu: RecordTable, beta, schema: KeySchema, rng: np.random.Generator
) -> RecordTable:
    """Draw an observed table from the hit-miss model given true values."""
    beta = np.asarray(beta, dtype=float)
    codes = mu.codes.copy()
    for i in range(schema.h):
        miss = rng.random(mu.n) >= beta[i]
        n_miss = int(miss.sum())
        if n_miss:
            codes[miss, i] = rng.integers(1, schema.k[i] + 1, size=n_miss)
    return RecordTable(codes, label=mu.label)
