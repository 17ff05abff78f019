"""Comparison-vector baselines: the two-component multivariate Bernoulli
mixture fitted by EM, likelihood-ratio and posterior scoring of pairs,
one-to-one assignment of the scored pairs, the constrained-mixture Bayesian
chain, and the plug-in population-size posterior."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln, xlogy

from ._kernels import matching_moves
from .core import KeySchema, MatchingMatrix, RecordTable
from .model import log_binom
from .sampler import NPosterior, PosteriorDraws, PriorConfig, SamplerConfig

MAX_PATTERN_VARS = 20


def pattern_bits(h: int) -> np.ndarray:
    """(2^h, h) matrix of field agreements; bit i-1 encodes variable i, so
    ascending pattern index enumerates (0,..,0), (1,0,..), (0,1,0,..), ..."""
    ids = np.arange(1 << h, dtype=np.int64)
    return (ids[:, None] >> np.arange(h)) & 1


@dataclass(frozen=True)
class ComparisonData:
    """Binary agreement patterns over all cross-file pairs."""

    n_a: int
    n_b: int
    h: int
    pattern_ids: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if int(self.counts.sum()) != self.n_a * self.n_b:
            raise ValueError("pattern counts must sum to n_a * n_b")

    @property
    def n_pairs(self) -> int:
        return self.n_a * self.n_b

    @property
    def bits(self) -> np.ndarray:
        return pattern_bits(self.h)

    def agreement_totals(self) -> np.ndarray:
        """Per-field count of agreeing pairs over the whole cross product."""
        return self.counts @ self.bits


def build_comparisons(
    x_a: RecordTable, x_b: RecordTable, schema: KeySchema
) -> ComparisonData:
    """Tally field-agreement patterns over all n^A x n^B pairs."""
    x_a.validate(schema)
    x_b.validate(schema)
    h = schema.h
    if h > MAX_PATTERN_VARS:
        raise ValueError(f"more than {MAX_PATTERN_VARS} key variables")
    ids = np.zeros((x_a.n, x_b.n), dtype=np.int64)
    for i in range(h):
        agree = x_a.codes[:, i, None] == x_b.codes[None, :, i]
        ids |= agree.astype(np.int64) << i
    counts = np.bincount(ids.ravel(), minlength=1 << h).astype(np.int64)
    return ComparisonData(x_a.n, x_b.n, h, ids, counts)


@dataclass(frozen=True)
class MixtureParams:
    """Match proportion and per-field agreement probabilities."""

    w: float
    m: np.ndarray
    u: np.ndarray


@dataclass(frozen=True)
class EMResult:
    params: MixtureParams
    loglik: float
    iterations: int
    converged: bool
    identifiable: bool


def _pattern_logliks(bits: np.ndarray, p: np.ndarray) -> np.ndarray:
    return xlogy(bits, p).sum(axis=1) + xlogy(1 - bits, 1.0 - p).sum(axis=1)


def em_fit(
    data: ComparisonData,
    init: MixtureParams | None = None,
    constraint_w_half: bool = False,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> EMResult:
    """Maximum-likelihood fit of the two-component Bernoulli mixture on the
    pattern counts. The observed-data log-likelihood is checked to be
    nondecreasing at every step; the run stops once the increase drops below
    tol. With constraint_w_half the components are swapped at the end if the
    match proportion exceeded one half."""
    if data.h < 3:
        warnings.warn(
            f"mixture with h={data.h} agreement fields is not generically "
            "identifiable; interpret the fit with care",
            stacklevel=2,
        )
    counts = data.counts.astype(float)
    total = counts.sum()
    bits = data.bits.astype(float)
    identifiable = int(np.count_nonzero(counts)) > 1
    if init is None:
        u0 = data.agreement_totals() / max(total, 1.0)
        init = MixtureParams(
            w=1.0 / max(data.n_a, data.n_b),
            m=np.full(data.h, 0.9),
            u=np.clip(u0, 1e-6, 1.0 - 1e-6),
        )
    w = float(init.w)
    m = np.asarray(init.m, dtype=float).copy()
    u = np.asarray(init.u, dtype=float).copy()
    prev = -np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        pm = np.exp(_pattern_logliks(bits, m))
        pu = np.exp(_pattern_logliks(bits, u))
        num = w * pm
        den = num + (1.0 - w) * pu
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = float(np.dot(counts, np.where(den > 0, np.log(den), -np.inf)))
            gamma = np.where(den > 0, num / den, 0.5)
        if ll < prev - 1e-9:
            raise AssertionError(f"EM log-likelihood decreased: {prev} -> {ll}")
        wm = counts * gamma
        wu = counts * (1.0 - gamma)
        sm, su = wm.sum(), wu.sum()
        w = sm / total
        # keep the agreement probabilities off the boundary: an exact 0 or 1
        # zeroes observed patterns under both components and stalls the fit
        if sm > 0:
            m = np.clip(wm @ bits / sm, 1e-10, 1.0 - 1e-10)
        if su > 0:
            u = np.clip(wu @ bits / su, 1e-10, 1.0 - 1e-10)
        if ll - prev < tol:
            converged = True
            prev = ll
            break
        prev = ll
    if constraint_w_half and w > 0.5:
        w, m, u = 1.0 - w, u, m
    return EMResult(
        MixtureParams(w, m, u), prev, iterations, converged, identifiable
    )


@dataclass(frozen=True)
class PairScores:
    """Per-pattern likelihood ratios and posterior match probabilities,
    expandable to per-pair matrices through the pattern index."""

    log_lambda: np.ndarray
    posterior: np.ndarray

    def log_lambda_matrix(self, data: ComparisonData) -> np.ndarray:
        return self.log_lambda[data.pattern_ids]

    def posterior_matrix(self, data: ComparisonData) -> np.ndarray:
        return self.posterior[data.pattern_ids]


def score_pairs(params: MixtureParams, data: ComparisonData) -> PairScores:
    """Likelihood ratio and posterior match probability per pattern; both
    depend on a pair only through its agreement pattern. Degenerate fitted
    probabilities yield +-inf log-ratios rather than errors."""
    bits = data.bits.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_lam = _pattern_logliks(bits, np.asarray(params.m, float)) - _pattern_logliks(
            bits, np.asarray(params.u, float)
        )
        w = float(params.w)
        if w <= 0.0:
            post = np.zeros_like(log_lam)
        elif w >= 1.0:
            post = np.ones_like(log_lam)
        else:
            logit = np.log(w) - np.log1p(-w) + log_lam
            post = np.where(
                np.isneginf(logit),
                0.0,
                np.where(np.isposinf(logit), 1.0, 1.0 / (1.0 + np.exp(-logit))),
            )
    return PairScores(log_lambda=log_lam, posterior=post)


def lp_assign(log_lambda_matrix: np.ndarray) -> MatchingMatrix:
    """Maximize the summed log likelihood ratio over one-to-one 0/1 matrices.

    Pairs with log-ratio <= 0 can never improve the objective, so the exact
    optimum is a maximum-weight assignment on the positive entries; entries
    clipped to zero are dropped from the returned matching.
    """
    scores = np.asarray(log_lambda_matrix, dtype=float)
    n_a, n_b = scores.shape
    clipped = np.clip(scores, 0.0, None)
    rows, cols = linear_sum_assignment(clipped, maximize=True)
    pairs = frozenset(
        (int(r) + 1, int(c) + 1)
        for r, c in zip(rows, cols)
        if scores[r, c] > 0.0
    )
    return MatchingMatrix(n_a, n_b, pairs)


def chapman_estimate(n_a: int, n_b: int, t_hat: int) -> float:
    """Two-sample ratio estimate (n^A+1)(n^B+1)/(T+1) used as a small-block
    fallback for the population size."""
    if min(n_a, n_b, t_hat) < 0:
        raise ValueError("counts must be nonnegative")
    return (n_a + 1) * (n_b + 1) / (t_hat + 1)


def hybrid_popsize(
    t_hat: int,
    n_a: int,
    n_b: int,
    prior: PriorConfig,
    epsilon: float = 1e-12,
) -> NPosterior:
    """Population-size posterior with the match count plugged in: the exact
    pmf used by the sampler's N step, evaluated at T = t_hat."""
    if t_hat > min(n_a, n_b):
        raise ValueError("t_hat exceeds the smaller sample size")
    return NPosterior.from_counts(t_hat, n_a, n_b, prior, epsilon)


def _match_prior_logmass(N: int, n_a: int, n_b: int) -> np.ndarray:
    """log p(C, T | N) for any single matching with T pairs, T = 0..min."""
    T = np.arange(min(n_a, n_b) + 1, dtype=float)
    return (
        -log_binom(n_b, T)
        - gammaln(T + 1.0)
        + log_binom(N - n_a, n_b - T)
        - log_binom(N, n_b)
    )


def jaro_constrained_chain(
    data: ComparisonData,
    n_a: int,
    n_b: int,
    prior: PriorConfig,
    config: SamplerConfig,
    state_recorder=None,
) -> PosteriorDraws:
    """Posterior simulation for the constrained mixture: the Bernoulli-mixture
    likelihood on comparison patterns combined with the one-to-one matching
    prior p(C | T) p(T | N) p(N). Gibbs steps update (m, u) by Beta conjugacy
    and N from its match-count posterior; the matching moves are single-pair
    add/delete/swap Metropolis proposals. state_recorder, if given, receives
    a copy of the per-row partner vector (0-based, -1 for unmatched) at every
    retained iteration."""
    if (n_a, n_b) != (data.n_a, data.n_b):
        raise ValueError("sample sizes disagree with the comparison data")
    rng = np.random.default_rng(config.seed)
    h = data.h
    bits = data.bits
    total_y = data.agreement_totals().astype(np.int64)
    n_pairs = data.n_pairs

    # start from greedy full-agreement pairs
    all_ones = (1 << h) - 1
    row_match = np.full(n_a, -1, dtype=np.int64)
    col_match = np.full(n_b, -1, dtype=np.int64)
    for a in range(n_a):
        for b in range(n_b):
            if data.pattern_ids[a, b] == all_ones and col_match[b] < 0:
                row_match[a] = b
                col_match[b] = a
                break
    T = int(np.count_nonzero(row_match >= 0))
    ysum = np.zeros(h, dtype=np.int64)
    for a in range(n_a):
        if row_match[a] >= 0:
            ysum += bits[data.pattern_ids[a, row_match[a]]]
    N = max(n_a + n_b - T, int(np.ceil(chapman_estimate(n_a, n_b, T))))
    if prior.n_cap is not None:
        N = min(N, prior.n_cap)
        if N < n_a + n_b - T:
            raise ValueError("n_cap is too small for the initial match count")

    moves_per_iter = config.inner_sweeps * max(n_a, n_b)
    keep = [
        it
        for it in range(config.iterations)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0
    ]
    R = len(keep)
    iters = np.asarray(keep, dtype=np.int64)
    N_out = np.zeros(R, dtype=np.int64)
    T_out = np.zeros(R, dtype=np.int64)
    params = {f"m_{i + 1}": np.zeros(R) for i in range(h)}
    params.update({f"u_{i + 1}": np.zeros(R) for i in range(h)})
    pair_counts = np.zeros((n_a, n_b), dtype=np.int64) if config.draw_c else None
    n_cache: dict[int, NPosterior] = {}
    bits_f = bits.astype(np.int64)
    r = 0
    for it in range(config.iterations):
        # (m, u) | C by Beta conjugacy under uniform priors
        miss = T - ysum
        m = rng.beta(1.0 + ysum, 1.0 + miss)
        u_agree = total_y - ysum
        u = rng.beta(1.0 + u_agree, 1.0 + (n_pairs - T) - u_agree)
        # N | T
        post = n_cache.get(T)
        if post is None:
            post = NPosterior.from_counts(
                T, n_a, n_b, prior, config.epsilon, max_points=10**6
            )
            n_cache[T] = post
        N = post.sample(rng)
        # C | m, u, N by Metropolis moves
        with np.errstate(divide="ignore"):
            log_lam_pat = _pattern_logliks(bits.astype(float), m) - _pattern_logliks(
                bits.astype(float), u
            )
        g_of_t = _match_prior_logmass(N, n_a, n_b)
        uniforms = rng.random((moves_per_iter, 5))
        T = int(
            matching_moves(
                row_match,
                col_match,
                data.pattern_ids,
                bits_f,
                log_lam_pat,
                g_of_t,
                T,
                ysum,
                uniforms,
            )
        )
        if r < R and it == keep[r]:
            N_out[r] = N
            T_out[r] = T
            for i in range(h):
                params[f"m_{i + 1}"][r] = m[i]
                params[f"u_{i + 1}"][r] = u[i]
            if pair_counts is not None:
                matched = np.flatnonzero(row_match >= 0)
                pair_counts[matched, row_match[matched]] += 1
            if state_recorder is not None:
                state_recorder(row_match.copy())
            r += 1
    return PosteriorDraws(
        n_a=n_a,
        n_b=n_b,
        iters=iters,
        N=N_out,
        T=T_out,
        params=params,
        pair_counts=pair_counts,
    )
