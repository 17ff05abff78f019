"""Metropolis-within-Gibbs sampler for the joint posterior over latent true
values, match structure, population counts, superpopulation probabilities and
measurement-error parameters, given two observed files.

The chain state is kept sparse: only cells with positive population count are
materialized, so per-iteration cost scales with the data rather than with the
full contingency table.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc, betaincinv, gammaln

from . import model
from ._kernels import mu_sweep
from .core import (
    FrequencyVector,
    InconsistentStateError,
    KeySchema,
    LatentState,
    MatchingMatrix,
    RecordTable,
    ThetaBlocks,
)
from .fileio import atomic_write_text, fmt
from .measurement import hit_count, likelihood_matrix


class NonintegrablePosteriorError(RuntimeError):
    """The population-size posterior has no summable tail."""


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the prior layer.

    g selects the member of the noninformative population-size family
    p_g(N) = Gamma(N - g + 1)/N!; n_prior_form can instead request the
    literal 1/N^2 prior. dirichlet_hyper gives the Dirichlet concentrations
    per independence-pattern block (scalar = same value in every component).
    capture_prior_factor multiplies the N posterior by (N+1)^-2, the marginal
    adjustment for unknown capture probabilities. n_cap hard-truncates the N
    prior (used by stationarity tests on enumerable instances).
    """

    g: float = 2.0
    n_prior_form: str = "gamma_form"
    dirichlet_hyper: float | Sequence = 1.0
    capture_prior_factor: bool = False
    n_cap: int | None = None

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("g must be nonnegative")
        if self.n_prior_form not in ("gamma_form", "inverse_square"):
            raise ValueError(f"unknown n_prior_form {self.n_prior_form!r}")

    def block_hyper(self, schema: KeySchema) -> list[np.ndarray]:
        sizes = [
            int(np.prod([schema.k[v - 1] for v in group]))
            for group in schema.independence_pattern
        ]
        hyper = self.dirichlet_hyper
        if np.isscalar(hyper):
            out = [np.full(size, float(hyper)) for size in sizes]
        else:
            if len(hyper) != len(sizes):
                raise ValueError("need one Dirichlet specification per block")
            out = []
            for spec, size in zip(hyper, sizes):
                arr = (
                    np.full(size, float(spec))
                    if np.isscalar(spec)
                    else np.asarray(spec, dtype=float)
                )
                if arr.shape != (size,):
                    raise ValueError(f"block hyper has length {arr.size}, expected {size}")
                out.append(arr)
        for arr in out:
            if np.any(arr <= 0):
                raise ValueError("Dirichlet concentrations must be positive")
        return out


@dataclass(frozen=True)
class SamplerConfig:
    """Iteration controls for one chain. file_specific_beta relaxes the
    shared measurement-error parameters to one vector per file."""

    iterations: int
    burn_in: int = 0
    thin: int = 1
    inner_sweeps: int = 5
    seed: int = 0
    epsilon: float = 1e-12
    draw_c: bool = True
    theta_margins: tuple[str, ...] = ()
    validate_states: bool = False
    file_specific_beta: bool = False

    def __post_init__(self):
        if not 0 <= self.burn_in <= self.iterations:
            raise ValueError("need iterations >= burn_in >= 0")
        if self.thin < 1 or self.inner_sweeps < 1:
            raise ValueError("thin and inner_sweeps must be >= 1")
        if not 0 < self.epsilon <= 1e-6:
            raise ValueError("epsilon must lie in (0, 1e-6]")


def parse_margin(spec: str) -> tuple[int, int]:
    """Parse a margin spec like '2=1' (variable 2 takes value 1)."""
    try:
        var, val = spec.split("=")
        return int(var), int(val)
    except ValueError as exc:
        raise ValueError(f"bad theta margin spec {spec!r}, expected 'var=value'") from exc


# ---------------------------------------------------------------------------
# population-size posterior
# ---------------------------------------------------------------------------


def _log_n_prior(N: np.ndarray, prior: PriorConfig) -> np.ndarray:
    N = np.asarray(N, dtype=float)
    if prior.n_prior_form == "inverse_square":
        lp = -2.0 * np.log(N)
    else:
        x = N - prior.g + 1.0
        lp = np.where(x > 0, gammaln(np.maximum(x, 1e-300)) - gammaln(N + 1.0), -np.inf)
    if prior.capture_prior_factor:
        lp = lp - 2.0 * np.log(N + 1.0)
    return lp


def n_posterior_logweights(
    T: int,
    n_a: int,
    n_b: int,
    prior: PriorConfig,
    epsilon: float = 1e-12,
    max_points: int = 10**7,
) -> tuple[int, np.ndarray]:
    """Unnormalized log posterior of N given T matches, evaluated from the
    support minimum upward until the remaining tail mass is below epsilon
    (relative). The overlap likelihood decays like N^-T and the prior adds
    N^-g (or N^-2), so the tail is bounded by the corresponding power law.
    """
    if not 0 <= T <= min(n_a, n_b):
        raise ValueError(f"T={T} outside [0, min(n_a, n_b)]")
    start = n_a + n_b - T
    if prior.n_cap is not None and prior.n_cap < start:
        raise ValueError("n_cap lies below the support of p(N | T)")
    tail_index = T + (2.0 if prior.n_prior_form == "inverse_square" else prior.g)
    if prior.capture_prior_factor:
        tail_index += 2.0
    if prior.n_cap is None and tail_index <= 1.0:
        raise NonintegrablePosteriorError(
            f"p(N | T={T}) decays like N^-{tail_index:g}: not summable; "
            "increase g or cap the prior"
        )
    chunks: list[np.ndarray] = []
    size = 0
    n_next = start
    chunk = 256
    while True:
        hi = n_next + chunk
        if prior.n_cap is not None:
            hi = min(hi, prior.n_cap + 1)
        Ns = np.arange(n_next, hi, dtype=np.int64)
        lw = (
            model.log_binom(Ns - n_a, n_b - T)
            - model.log_binom(Ns, n_b)
            + model.log_binom(n_a, T)
            + _log_n_prior(Ns, prior)
        )
        chunks.append(np.atleast_1d(lw))
        size += Ns.size
        if prior.n_cap is not None and hi > prior.n_cap:
            break
        all_lw = np.concatenate(chunks)
        if size >= 2 and np.isfinite(all_lw[-1]) and np.isfinite(all_lw[-2]):
            ratio = math.exp(min(all_lw[-1] - all_lw[-2], 50.0))
            if ratio < 1.0:
                m = all_lw.max()
                total = float(np.exp(all_lw - m).sum())
                w_last = math.exp(all_lw[-1] - m)
                bound = w_last * (hi / (tail_index - 1.0) + 1.0)
                if bound <= epsilon * total:
                    break
        if size >= max_points:
            # integrable power-law tail that needs more than the cap to get
            # under epsilon: truncate here, the residual mass is the bound
            warnings.warn(
                f"p(N | T={T}) truncated at {max_points} support points with "
                "tail mass above the requested tolerance",
                stacklevel=2,
            )
            break
        n_next = hi
        chunk = min(chunk * 2, 1 << 20)
    return start, np.concatenate(chunks)


class NPosterior:
    """Exact (to tail tolerance) pmf of the population size given T matches."""

    def __init__(self, support: np.ndarray, pmf: np.ndarray):
        self.support = support
        self.pmf = pmf
        self._cdf = np.cumsum(pmf)
        self._cdf[-1] = 1.0

    @classmethod
    def from_counts(
        cls,
        T: int,
        n_a: int,
        n_b: int,
        prior: PriorConfig,
        epsilon: float = 1e-12,
        max_points: int = 10**7,
    ) -> "NPosterior":
        start, lw = n_posterior_logweights(T, n_a, n_b, prior, epsilon, max_points)
        support = np.arange(start, start + lw.size, dtype=np.int64)
        finite = np.isfinite(lw)
        if not finite.any():
            raise NonintegrablePosteriorError("posterior for N has no support")
        w = np.zeros_like(lw)
        w[finite] = np.exp(lw[finite] - lw[finite].max())
        pmf = w / w.sum()
        return cls(support, pmf)

    def quantile(self, q: float) -> int:
        return int(self.support[np.searchsorted(self._cdf, q, side="left")])

    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf))

    def sample(self, rng: np.random.Generator) -> int:
        return int(self.support[np.searchsorted(self._cdf, rng.random(), side="right")])


def sample_N(
    T: int,
    n_a: int,
    n_b: int,
    prior: PriorConfig,
    epsilon: float = 1e-12,
    rng: np.random.Generator | None = None,
) -> int:
    """Exact inverse-CDF draw from p(N | T)."""
    rng = rng if rng is not None else np.random.default_rng()
    return NPosterior.from_counts(T, n_a, n_b, prior, epsilon).sample(rng)


# ---------------------------------------------------------------------------
# chain state
# ---------------------------------------------------------------------------


class ChainState:
    """Mutable state of one chain, stored sparsely over occupied cells.

    Unit true values are kept as indices into the occupied-cell arrays; the
    invariant max(f^A_j, f^B_j) <= F_j guarantees every unit's cell stays
    occupied across updates.
    """

    def __init__(
        self,
        schema: KeySchema,
        x_a: RecordTable,
        x_b: RecordTable,
        mu_a_cells: np.ndarray,
        mu_b_cells: np.ndarray,
        F: FrequencyVector,
        t: FrequencyVector,
        N: int,
        theta: ThetaBlocks,
        beta: np.ndarray,
    ):
        self.schema = schema
        self.k = np.asarray(schema.k, dtype=np.int64)
        self.x_a = x_a
        self.x_b = x_b
        self.xa_codes = schema.check_codes(x_a.codes) if x_a.n else x_a.codes
        self.xb_codes = schema.check_codes(x_b.codes) if x_b.n else x_b.codes
        self.N = int(N)
        self.theta = theta
        self.beta = np.asarray(beta, dtype=float).copy()
        self._set_population(F)
        self.mua_idx = self._locate(np.asarray(mu_a_cells, dtype=np.int64))
        self.mub_idx = self._locate(np.asarray(mu_b_cells, dtype=np.int64))
        self.counts_a = np.bincount(self.mua_idx, minlength=self.m).astype(np.int64)
        self.counts_b = np.bincount(self.mub_idx, minlength=self.m).astype(np.int64)
        if np.any(self.counts_a > self.F_occ) or np.any(self.counts_b > self.F_occ):
            raise InconsistentStateError("sample counts exceed population counts")
        self.t_occ = np.zeros(self.m, dtype=np.int64)
        for j, tj in t.items():
            pos = int(np.searchsorted(self.occ_cells, j))
            if pos >= self.m or self.occ_cells[pos] != j:
                raise InconsistentStateError(f"t assigns matches to empty cell {j}")
            self.t_occ[pos] = tj
        bad = (self.t_occ > np.minimum(self.counts_a, self.counts_b)) | (self.t_occ < 0)
        if np.any(bad):
            raise InconsistentStateError("t exceeds min(f^A, f^B) in some cell")

    @property
    def n_a(self) -> int:
        return self.xa_codes.shape[0]

    @property
    def n_b(self) -> int:
        return self.xb_codes.shape[0]

    @property
    def m(self) -> int:
        return self.occ_cells.shape[0]

    @property
    def T(self) -> int:
        return int(self.t_occ.sum())

    def _set_population(self, F: FrequencyVector) -> None:
        items = F.items()
        self.occ_cells = np.asarray([j for j, _ in items], dtype=np.int64)
        self.F_occ = np.asarray([c for _, c in items], dtype=np.int64)
        self.occ_codes = (
            self.schema.codes_of(self.occ_cells)
            if self.occ_cells.size
            else np.empty((0, self.schema.h), dtype=np.int64)
        )
        if int(self.F_occ.sum()) != self.N:
            raise InconsistentStateError("F does not sum to N")

    def _locate(self, cells: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.occ_cells, cells)
        if np.any(pos >= self.m) or np.any(self.occ_cells[np.minimum(pos, self.m - 1)] != cells):
            raise InconsistentStateError("a unit's true value lies in an empty cell")
        return pos.astype(np.int64)

    def replace_population(self, cells: np.ndarray, counts: np.ndarray, N: int) -> None:
        """Install a new F (sorted cells, positive counts) and remap units."""
        mu_a_cells = self.occ_cells[self.mua_idx] if self.n_a else np.empty(0, np.int64)
        mu_b_cells = self.occ_cells[self.mub_idx] if self.n_b else np.empty(0, np.int64)
        t_cells = self.occ_cells[self.t_occ > 0]
        t_vals = self.t_occ[self.t_occ > 0]
        self.N = int(N)
        self.occ_cells = cells
        self.F_occ = counts
        self.occ_codes = (
            self.schema.codes_of(cells) if cells.size else np.empty((0, self.schema.h), np.int64)
        )
        self.mua_idx = self._locate(mu_a_cells)
        self.mub_idx = self._locate(mu_b_cells)
        self.counts_a = np.bincount(self.mua_idx, minlength=self.m).astype(np.int64)
        self.counts_b = np.bincount(self.mub_idx, minlength=self.m).astype(np.int64)
        self.t_occ = np.zeros(self.m, dtype=np.int64)
        if t_cells.size:
            self.t_occ[self._locate(t_cells)] = t_vals

    def beta_for(self, which: str) -> np.ndarray:
        """Measurement-error vector of one file (rows of beta when the two
        files carry separate parameters)."""
        if self.beta.ndim == 1:
            return self.beta
        return self.beta[0] if which == "A" else self.beta[1]

    def likelihoods(self) -> tuple[np.ndarray, np.ndarray]:
        lik_a = likelihood_matrix(
            self.xa_codes, self.occ_codes, self.beta_for("A"), self.k
        )
        lik_b = likelihood_matrix(
            self.xb_codes, self.occ_codes, self.beta_for("B"), self.k
        )
        return lik_a, lik_b

    def mu_codes(self, which: str) -> np.ndarray:
        idx = self.mua_idx if which == "A" else self.mub_idx
        return self.occ_codes[idx]

    def to_latent(self, C: MatchingMatrix | None = None) -> LatentState:
        t = FrequencyVector(
            {int(self.occ_cells[p]): int(v) for p, v in enumerate(self.t_occ) if v}
        )
        F = FrequencyVector(
            {int(j): int(c) for j, c in zip(self.occ_cells, self.F_occ)}
        )
        return LatentState(
            mu_a=RecordTable(self.mu_codes("A"), label="A"),
            mu_b=RecordTable(self.mu_codes("B"), label="B"),
            t=t,
            F=F,
            N=self.N,
            theta=self.theta,
            beta=self.beta.copy(),
            C=C,
        )


def greedy_agreement_matching(
    xa_cells: np.ndarray, xb_cells: np.ndarray
) -> list[tuple[int, int]]:
    """Exact-agreement pairs, first-come in lexicographic (a, b) order."""
    available: dict[int, list[int]] = {}
    for b in range(len(xb_cells) - 1, -1, -1):
        available.setdefault(int(xb_cells[b]), []).append(b + 1)
    pairs = []
    for a, cell in enumerate(xa_cells, start=1):
        stack = available.get(int(cell))
        if stack:
            pairs.append((a, stack.pop()))
    return pairs


def initial_state(
    x_a: RecordTable,
    x_b: RecordTable,
    schema: KeySchema,
    prior: PriorConfig,
    rng: np.random.Generator,
    beta0: float = 0.9,
    file_specific_beta: bool = False,
) -> ChainState:
    """Consistent high-likelihood start: true values set to the observations,
    matches from greedy exact agreement, N from the two-sample ratio estimate
    (n^A+1)(n^B+1)/(T+1), remaining population mass drawn from uniform theta.
    """
    n_a, n_b = x_a.n, x_b.n
    xa_cells = schema.cells_of(x_a.codes)
    xb_cells = schema.cells_of(x_b.codes)
    pairs = greedy_agreement_matching(xa_cells, xb_cells)
    T0 = len(pairs)
    chapman = (n_a + 1) * (n_b + 1) / (T0 + 1)
    N0 = max(n_a + n_b - T0, math.ceil(chapman))
    if prior.n_cap is not None:
        N0 = min(N0, prior.n_cap)
        if N0 < n_a + n_b - T0:
            raise ValueError("n_cap is too small for the initial match count")
    theta = ThetaBlocks(schema)
    t0 = FrequencyVector.from_cells(int(xa_cells[a - 1]) for a, _ in pairs)
    F = FrequencyVector.from_cells(xa_cells)
    for j in xb_cells:
        F.add(int(j))
    for j, tj in t0.items():
        F.remove(j, tj)
    extra = N0 - F.total
    if extra:
        for j in schema.cells_of(theta.draw_codes(extra, rng)):
            F.add(int(j))
    shape = (2, schema.h) if file_specific_beta else (schema.h,)
    beta = np.full(shape, beta0)
    return ChainState(schema, x_a, x_b, xa_cells, xb_cells, F, t0, N0, theta, beta)


# ---------------------------------------------------------------------------
# Gibbs updates
# ---------------------------------------------------------------------------


def update_mu_unit(state: ChainState, which: str, unit: int, rng: np.random.Generator):
    """Redraw the true value of one unit (1-based) from its full conditional:
    residual population count times the hit-miss record likelihood."""
    idx = state.mua_idx if which == "A" else state.mub_idx
    counts = state.counts_a if which == "A" else state.counts_b
    x_codes = state.xa_codes if which == "A" else state.xb_codes
    s = unit - 1
    resid = (state.F_occ - counts).astype(float)
    resid[idx[s]] += 1.0
    lik = likelihood_matrix(
        x_codes[s : s + 1], state.occ_codes, state.beta_for(which), state.k
    )[0]
    p = resid * lik
    tot = p.sum()
    if tot <= 0.0:
        raise InconsistentStateError(f"no admissible cell for unit {unit} of file {which}")
    new = int(np.searchsorted(np.cumsum(p), rng.random() * tot, side="right"))
    new = min(new, state.m - 1)
    counts[idx[s]] -= 1
    counts[new] += 1
    idx[s] = new
    return state


def update_mu_sweep(
    state: ChainState, which: str, rng: np.random.Generator, lik: np.ndarray
) -> None:
    """One full-conditional pass over all units of one file (hot path)."""
    idx = state.mua_idx if which == "A" else state.mub_idx
    counts = state.counts_a if which == "A" else state.counts_b
    n = idx.shape[0]
    if n == 0:
        return
    resid = (state.F_occ - counts).astype(np.float64)
    status = mu_sweep(idx, resid, lik, rng.random(n))
    if status < 0:
        raise InconsistentStateError(f"no admissible cell during sweep of file {which}")
    counts[:] = np.rint(state.F_occ - resid).astype(np.int64)


def update_t(state: ChainState, rng: np.random.Generator):
    """Redraw per-cell match counts: independent hypergeometric draws in the
    cells occupied by both samples, zero elsewhere."""
    fa, fb = state.counts_a, state.counts_b
    t = np.zeros(state.m, dtype=np.int64)
    mask = (fa > 0) & (fb > 0)
    if mask.any():
        t[mask] = rng.hypergeometric(fa[mask], state.F_occ[mask] - fa[mask], fb[mask])
    state.t_occ = t
    return state


def update_F(
    state: ChainState,
    prior: PriorConfig,
    rng: np.random.Generator,
    epsilon: float = 1e-12,
    n_cache: dict | None = None,
):
    """Redraw (N, F): N from its match-count posterior, then the unsampled
    residual mass from a multinomial over theta, added to the sample counts."""
    T = state.T
    # a transient T near zero can make the tail very heavy; one million
    # support points keeps the truncated mass statistically negligible
    # without holding pathologically large pmfs in the cache
    if n_cache is not None:
        post = n_cache.get(T)
        if post is None:
            post = NPosterior.from_counts(
                T, state.n_a, state.n_b, prior, epsilon, max_points=10**6
            )
            n_cache[T] = post
    else:
        post = NPosterior.from_counts(
            T, state.n_a, state.n_b, prior, epsilon, max_points=10**6
        )
    N = post.sample(rng)
    extra = N - state.n_a - state.n_b + T
    base = state.counts_a + state.counts_b - state.t_occ
    keep = base > 0
    cells = state.occ_cells[keep]
    counts = base[keep]
    if extra:
        drawn = state.schema.cells_of(state.theta.draw_codes(extra, rng))
        merged = np.concatenate([cells, drawn])
        weights = np.concatenate([counts, np.ones(extra, dtype=np.int64)])
        uniq = np.unique(merged)
        acc = np.zeros(uniq.size, dtype=np.int64)
        np.add.at(acc, np.searchsorted(uniq, merged), weights)
        cells, counts = uniq, acc
    state.replace_population(cells, counts, N)
    return state


def update_theta(state: ChainState, prior: PriorConfig, rng: np.random.Generator):
    """Conjugate Dirichlet update of each block from its margin of F."""
    hyper = prior.block_hyper(state.schema)
    for g in range(len(state.theta.groups)):
        counts = np.zeros(state.theta.group_sizes[g], dtype=np.int64)
        if state.m:
            np.add.at(counts, state.theta.group_indices(state.occ_codes, g), state.F_occ)
        state.theta.probs[g] = rng.dirichlet(hyper[g] + counts)
    return state


def _draw_beta_row(
    x_codes: np.ndarray,
    mu_codes: np.ndarray,
    k: np.ndarray,
    out: np.ndarray,
    rng: np.random.Generator,
) -> None:
    n_tot = x_codes.shape[0]
    for i in range(k.shape[0]):
        hits = hit_count(x_codes, mu_codes, i + 1)
        a, b = hits + 1.0, n_tot - hits + 1.0
        k_i = k[i]
        lo = betainc(a, b, 1.0 / k_i)
        eta = betaincinv(a, b, lo + rng.random() * (1.0 - lo))
        out[i] = (k_i * eta - 1.0) / (k_i - 1.0)


def update_beta(state: ChainState, rng: np.random.Generator):
    """Conjugate update of the hit probabilities: for each variable the
    chance-corrected hit rate eta has a Beta posterior truncated to
    (1/k_i, 1); beta is recovered by the linear transform. With per-file
    parameters each file contributes only its own hit counts."""
    if state.beta.ndim == 1:
        x_stack = np.vstack([state.xa_codes, state.xb_codes])
        mu_stack = np.vstack([state.mu_codes("A"), state.mu_codes("B")])
        _draw_beta_row(x_stack, mu_stack, state.k, state.beta, rng)
    else:
        _draw_beta_row(state.xa_codes, state.mu_codes("A"), state.k, state.beta[0], rng)
        _draw_beta_row(state.xb_codes, state.mu_codes("B"), state.k, state.beta[1], rng)
    return state


def _draw_pair_arrays(
    state: ChainState, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """0-based (row, column) unit indices of one matching draw given t.

    Each file's units are ordered by independent random keys within their
    cells and the first t_j of both orders are paired; pairing two uniform
    ordered selections yields every (subset, subset, bijection) configuration
    of a cell with the same probability.
    """
    order_a = np.lexsort((rng.random(state.n_a), state.mua_idx))
    order_b = np.lexsort((rng.random(state.n_b), state.mub_idx))
    start_a = np.concatenate(
        ([0], np.cumsum(np.bincount(state.mua_idx, minlength=state.m)))
    )
    start_b = np.concatenate(
        ([0], np.cumsum(np.bincount(state.mub_idx, minlength=state.m)))
    )
    took_a: list[np.ndarray] = []
    took_b: list[np.ndarray] = []
    for pos in np.flatnonzero(state.t_occ > 0):
        tj = int(state.t_occ[pos])
        if tj > min(start_a[pos + 1] - start_a[pos], start_b[pos + 1] - start_b[pos]):
            raise InconsistentStateError(
                f"t exceeds block size in cell {int(state.occ_cells[pos])}"
            )
        took_a.append(order_a[start_a[pos] : start_a[pos] + tj])
        took_b.append(order_b[start_b[pos] : start_b[pos] + tj])
    if not took_a:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(took_a), np.concatenate(took_b)


def draw_C(state: ChainState, rng: np.random.Generator) -> MatchingMatrix:
    """Draw a matching matrix given t: per cell, a uniform choice of t_j units
    from each file and a uniform bijection between them."""
    rows, cols = _draw_pair_arrays(state, rng)
    pairs = frozenset(
        (int(a) + 1, int(b) + 1) for a, b in zip(rows.tolist(), cols.tolist())
    )
    return MatchingMatrix(state.n_a, state.n_b, pairs)


def gibbs_scan(
    state: ChainState,
    prior: PriorConfig,
    config: SamplerConfig,
    rng: np.random.Generator,
    n_cache: dict | None = None,
) -> None:
    """One outer iteration: repeated mu sweeps, then t, (N, F), theta, beta."""
    lik_a, lik_b = state.likelihoods()
    for _ in range(config.inner_sweeps):
        update_mu_sweep(state, "A", rng, lik_a)
        update_mu_sweep(state, "B", rng, lik_b)
    update_t(state, rng)
    update_F(state, prior, rng, config.epsilon, n_cache)
    update_theta(state, prior, rng)
    update_beta(state, rng)


# ---------------------------------------------------------------------------
# chain driver and results
# ---------------------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Retained draws of one chain plus accumulated pairwise match counts."""

    n_a: int
    n_b: int
    iters: np.ndarray
    N: np.ndarray
    T: np.ndarray
    params: dict[str, np.ndarray]
    pair_counts: np.ndarray | None = None

    @property
    def retained(self) -> int:
        return self.N.shape[0]

    def pair_probability_matrix(self) -> np.ndarray:
        if self.pair_counts is None:
            raise ValueError("chain was run without matching-matrix draws")
        denom = max(self.retained, 1)
        return self.pair_counts / denom

    def pair_probabilities(self) -> dict[tuple[int, int], float]:
        mat = self.pair_probability_matrix()
        out = {}
        for a, b in zip(*np.nonzero(mat)):
            out[(int(a) + 1, int(b) + 1)] = float(mat[a, b])
        return out

    def quantiles(self, name: str, qs: Sequence[float]) -> list[float]:
        arr = self._series(name)
        if arr.size == 0:
            return [float("nan")] * len(qs)
        return [float(np.quantile(arr, q, method="inverted_cdf")) for q in qs]

    def mean(self, name: str) -> float:
        arr = self._series(name)
        return float(arr.mean()) if arr.size else float("nan")

    def _series(self, name: str) -> np.ndarray:
        if name == "N":
            return self.N
        if name == "T":
            return self.T
        return self.params[name]

    def series_names(self) -> list[str]:
        return ["N", "T", *self.params.keys()]

    def write_trace(self, path) -> None:
        names = list(self.params.keys())
        lines = ["\t".join(["iter", "N", "T", *names])]
        for r in range(self.retained):
            row = [str(int(self.iters[r])), str(int(self.N[r])), str(int(self.T[r]))]
            row += [fmt(self.params[name][r]) for name in names]
            lines.append("\t".join(row))
        atomic_write_text(path, "\n".join(lines) + "\n")

    def write_pair_probs(self, path) -> None:
        lines = ["\t".join(["a", "b", "posterior_probability"])]
        if self.pair_counts is not None and self.retained:
            mat = self.pair_probability_matrix()
            for a, b in sorted(zip(*[c.tolist() for c in np.nonzero(mat)])):
                lines.append(f"{a + 1}\t{b + 1}\t{fmt(mat[a, b])}")
        atomic_write_text(path, "\n".join(lines) + "\n")


def run_chain(
    x_a: RecordTable,
    x_b: RecordTable,
    schema: KeySchema,
    prior: PriorConfig,
    config: SamplerConfig,
) -> PosteriorDraws:
    """Run one chain and return the retained draws. Deterministic given the
    seed; burn-in discarded and thinning applied before anything is stored."""
    x_a.validate(schema)
    x_b.validate(schema)
    rng = np.random.default_rng(config.seed)
    state = initial_state(
        x_a, x_b, schema, prior, rng, file_specific_beta=config.file_specific_beta
    )
    margins = [parse_margin(s) for s in config.theta_margins]
    keep = [
        it
        for it in range(config.iterations)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0
    ]
    R = len(keep)
    iters = np.asarray(keep, dtype=np.int64)
    N_out = np.zeros(R, dtype=np.int64)
    T_out = np.zeros(R, dtype=np.int64)
    if config.file_specific_beta:
        beta_names = [
            f"beta_{f}_{i + 1}" for f in ("a", "b") for i in range(schema.h)
        ]
    else:
        beta_names = [f"beta_{i + 1}" for i in range(schema.h)]
    params: dict[str, np.ndarray] = {name: np.zeros(R) for name in beta_names}
    for spec in config.theta_margins:
        params[f"theta[{spec}]"] = np.zeros(R)
    pair_counts = (
        np.zeros((x_a.n, x_b.n), dtype=np.int64) if config.draw_c else None
    )
    n_cache: dict[int, NPosterior] = {}
    r = 0
    for it in range(config.iterations):
        gibbs_scan(state, prior, config, rng, n_cache)
        if r < R and it == keep[r]:
            N_out[r] = state.N
            T_out[r] = state.T
            for name, value in zip(beta_names, state.beta.ravel()):
                params[name][r] = value
            for spec, (var, val) in zip(config.theta_margins, margins):
                params[f"theta[{spec}]"][r] = state.theta.margin(var, val)
            if config.validate_states:
                state.to_latent().validate(schema)
            if pair_counts is not None:
                rows, cols = _draw_pair_arrays(state, rng)
                np.add.at(pair_counts, (rows, cols), 1)
            r += 1
    return PosteriorDraws(
        n_a=x_a.n,
        n_b=x_b.n,
        iters=iters,
        N=N_out,
        T=T_out,
        params=params,
        pair_counts=pair_counts,
    )
