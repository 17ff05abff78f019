"""Closed-form log-densities of the hierarchical two-sample model.

All functions work on sparse cell counts (FrequencyVector) and return -inf
outside the support instead of raising, so that enumeration tests can sweep
freely over candidate states. Binomial and multinomial coefficients are
evaluated through log-gamma for overflow safety.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .core import FrequencyVector


def log_binom(n, k):
    """log C(n, k); -inf when k < 0 or k > n. Accepts arrays."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    valid = (k >= 0) & (k <= n)
    out = np.where(
        valid,
        gammaln(np.maximum(n, 0) + 1)
        - gammaln(np.maximum(k, 0) + 1)
        - gammaln(np.maximum(n - k, 0) + 1),
        -np.inf,
    )
    return out if out.ndim else float(out)


def _cells_union(*fvs: FrequencyVector) -> list[int]:
    cells: set[int] = set()
    for fv in fvs:
        cells.update(fv.cells())
    return sorted(cells)


def log_sample_given_population(
    f: FrequencyVector, n: int, F: FrequencyVector, N: int
) -> float:
    """Log-probability of one ordered sample of true values given the
    population counts: a uniform draw of the counts f from F without
    replacement, divided by the number of orderings with those counts."""
    if f.total != n or n > N:
        return -np.inf
    lp = -float(log_binom(N, n)) - gammaln(n + 1)
    for j, fj in f.items():
        Fj = F.get(j)
        if fj > Fj:
            return -np.inf
        lp += float(log_binom(Fj, fj)) + gammaln(fj + 1)
    return float(lp)


def log_mu_pair_given_match_structure(
    f_a: FrequencyVector,
    f_b: FrequencyVector,
    t: FrequencyVector,
    F: FrequencyVector,
    N: int,
    n_a: int,
    n_b: int,
) -> float:
    """Log-probability of the ordered pair (mu^A, mu^B) given the matching
    structure (t and a matching matrix with T = sum t matches) and F."""
    T = t.total
    if f_a.total != n_a or f_b.total != n_b:
        return -np.inf
    rest = N - n_a - n_b + T
    if rest < 0 or N < max(n_a, n_b):
        return -np.inf
    # joint distribution of the sample counts given the structure
    lp = -(
        gammaln(N - T + 1)
        - gammaln(n_a - T + 1)
        - gammaln(n_b - T + 1)
        - gammaln(rest + 1)
    )
    # orderings reproducing the observed mu vectors
    lp -= gammaln(T + 1) + gammaln(n_a - T + 1) + gammaln(n_b - T + 1)
    for j in _cells_union(f_a, f_b, t, F):
        Fj, fa, fb, tj = F.get(j), f_a.get(j), f_b.get(j), t.get(j)
        rj = Fj - fa - fb + tj
        if tj < 0 or tj > min(fa, fb) or max(fa, fb) > Fj or rj < 0:
            return -np.inf
        lp += (
            gammaln(Fj - tj + 1)
            - gammaln(fa - tj + 1)
            - gammaln(fb - tj + 1)
            - gammaln(rj + 1)
        )
        lp += gammaln(tj + 1) + gammaln(fa - tj + 1) + gammaln(fb - tj + 1)
    return float(lp)


def log_matching_given_t(T: int, n_a: int, n_b: int) -> float:
    """Log-probability of any single matching matrix with T matches under the
    uniform prior over matrices with that match count."""
    if T < 0 or T > min(n_a, n_b):
        return -np.inf
    return float(-log_binom(n_a, T) - log_binom(n_b, T) - gammaln(T + 1))


def log_overlap_given_population(T: int, N: int, n_a: int, n_b: int) -> float:
    """Log hypergeometric pmf of the number of units common to both samples."""
    return float(
        log_binom(n_a, T) + log_binom(N - n_a, n_b - T) - log_binom(N, n_b)
    )


def log_t_given_population(
    t: FrequencyVector, F: FrequencyVector, N: int, n_a: int, n_b: int
) -> float:
    """Log-prior of the per-cell match counts given the population counts:
    a multivariate hypergeometric split of T common units over cells, times
    the hypergeometric law of T itself."""
    T = t.total
    lp = log_overlap_given_population(T, N, n_a, n_b) - float(log_binom(N, T))
    if not np.isfinite(lp):
        return -np.inf
    for j, tj in t.items():
        c = float(log_binom(F.get(j), tj))
        if not np.isfinite(c):
            return -np.inf
        lp += c
    return float(lp)


def log_t_full_conditional(
    t: FrequencyVector, f_a: FrequencyVector, f_b: FrequencyVector, F: FrequencyVector
) -> float:
    """Log of the product of independent per-cell hypergeometric pmfs for t
    given the sample and population counts."""
    lp = 0.0
    for j in _cells_union(f_a, f_b, t):
        fa, fb, tj, Fj = f_a.get(j), f_b.get(j), t.get(j), F.get(j)
        c = (
            log_binom(fa, tj)
            + log_binom(Fj - fa, fb - tj)
            - log_binom(Fj, fb)
        )
        if not np.isfinite(c):
            return -np.inf
        lp += float(c)
    return float(lp)
