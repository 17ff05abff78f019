from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from helpers import all_matchings, boxed_vectors, freq_from_vector, table_from_cells
from linkpop.core import FrequencyVector, InconsistentStateError, KeySchema, t_from
from linkpop.model import (
    log_binom,
    log_matching_given_t,
    log_mu_pair_given_match_structure,
    log_overlap_given_population,
    log_sample_given_population,
    log_t_full_conditional,
    log_t_given_population,
)

SCHEMA2 = KeySchema(k=(2,))


def test_log_binom_against_math_comb():
    for n in range(0, 12):
        for k in range(-1, n + 2):
            got = log_binom(n, k)
            if 0 <= k <= n:
                assert got == pytest.approx(math.log(math.comb(n, k)), abs=1e-12)
            else:
                assert got == -np.inf


def test_log_sample_matches_sequential_drawing():
    # ordered SRSWOR probability factorizes as residual-count / remaining-size
    rng = np.random.default_rng(2)
    for _ in range(30):
        F_vec = rng.integers(0, 4, size=3)
        N = int(F_vec.sum())
        if N < 2:
            continue
        n = int(rng.integers(1, N + 1))
        pop = np.repeat(np.arange(1, 4), F_vec)
        draw = rng.choice(pop, size=n, replace=False)
        seq = 1.0
        remaining = F_vec.astype(float).copy()
        for s, cell in enumerate(draw):
            seq *= remaining[cell - 1] / (N - s)
            remaining[cell - 1] -= 1
        f = FrequencyVector.from_cells(int(c) for c in draw)
        F = freq_from_vector(F_vec)
        assert math.exp(log_sample_given_population(f, n, F, N)) == pytest.approx(
            seq, rel=1e-12
        )


def test_log_sample_zero_outside_support():
    F = FrequencyVector({1: 1, 2: 1})
    f = FrequencyVector({1: 2})
    assert log_sample_given_population(f, 2, F, 2) == -np.inf


def test_overlap_pmf_normalizes():
    n_a, n_b, N = 3, 4, 9
    total = sum(
        math.exp(log_overlap_given_population(T, N, n_a, n_b))
        for T in range(0, min(n_a, n_b) + 1)
    )
    assert total == pytest.approx(1.0, rel=1e-12)


def _enumerate_mu_pairs(n_a, n_b, K):
    cells = range(1, K + 1)
    for mu_a in itertools.product(cells, repeat=n_a):
        for mu_b in itertools.product(cells, repeat=n_b):
            yield mu_a, mu_b


def _factored_mass(mu_a_cells, mu_b_cells, F, N, n_a, n_b):
    """Sum over matchings of p(mu | C, t, F) p(C | t) p(t | F)."""
    mu_a = table_from_cells(mu_a_cells, SCHEMA2)
    mu_b = table_from_cells(mu_b_cells, SCHEMA2)
    f_a = FrequencyVector.from_cells(mu_a_cells)
    f_b = FrequencyVector.from_cells(mu_b_cells)
    total = 0.0
    for C in all_matchings(n_a, n_b):
        try:
            t = t_from(mu_a, mu_b, C, SCHEMA2)
        except InconsistentStateError:
            continue
        lp = (
            log_mu_pair_given_match_structure(f_a, f_b, t, F, N, n_a, n_b)
            + log_matching_given_t(C.T, n_a, n_b)
            + log_t_given_population(t, F, N, n_a, n_b)
        )
        if np.isfinite(lp):
            total += math.exp(lp)
    return total


def test_factored_model_marginalizes_to_closed_form():
    """Summing the (C, t)-factored joint over the matching structure recovers
    the product of per-file sampling densities, for every state of the
    enumerable instance."""
    n_a = n_b = 2
    for N in range(2, 7):
        for F1 in range(N + 1):
            F = freq_from_vector((F1, N - F1))
            for mu_a_cells, mu_b_cells in _enumerate_mu_pairs(n_a, n_b, 2):
                f_a = FrequencyVector.from_cells(mu_a_cells)
                f_b = FrequencyVector.from_cells(mu_b_cells)
                closed = math.exp(
                    log_sample_given_population(f_a, n_a, F, N)
                    + log_sample_given_population(f_b, n_b, F, N)
                )
                factored = _factored_mass(mu_a_cells, mu_b_cells, F, N, n_a, n_b)
                if closed == 0.0:
                    assert factored == 0.0
                else:
                    assert factored == pytest.approx(closed, rel=1e-10)


def test_total_mass_of_closed_form_is_one():
    n_a = n_b = 2
    for N in (3, 5):
        for F1 in range(N + 1):
            F = freq_from_vector((F1, N - F1))
            total = 0.0
            for mu_a_cells, mu_b_cells in _enumerate_mu_pairs(n_a, n_b, 2):
                f_a = FrequencyVector.from_cells(mu_a_cells)
                f_b = FrequencyVector.from_cells(mu_b_cells)
                total += math.exp(
                    log_sample_given_population(f_a, n_a, F, N)
                    + log_sample_given_population(f_b, n_b, F, N)
                )
            assert total == pytest.approx(1.0, rel=1e-10)


def test_t_conditional_matches_hypergeometric_product():
    """The normalized product p(mu | t, F) p(t | F) over t equals the product
    of independent per-cell hypergeometric pmfs, exactly."""
    n_a = n_b = 2
    for N in range(2, 7):
        for F1 in range(N + 1):
            F = freq_from_vector((F1, N - F1))
            for mu_a_cells, mu_b_cells in _enumerate_mu_pairs(n_a, n_b, 2):
                f_a = FrequencyVector.from_cells(mu_a_cells)
                f_b = FrequencyVector.from_cells(mu_b_cells)
                if any(f_a.get(j) > F.get(j) or f_b.get(j) > F.get(j) for j in (1, 2)):
                    continue
                limits = [min(f_a.get(j), f_b.get(j)) for j in (1, 2)]
                weights = {}
                for t_vec in boxed_vectors(limits):
                    t = freq_from_vector(t_vec)
                    # matchings consistent with (mu, t): choose the matched
                    # units in each file and one bijection per cell
                    log_count = sum(
                        log_binom(f_a.get(j), t.get(j))
                        + log_binom(f_b.get(j), t.get(j))
                        + math.lgamma(t.get(j) + 1)
                        for j in (1, 2)
                    )
                    lp = (
                        log_mu_pair_given_match_structure(f_a, f_b, t, F, N, n_a, n_b)
                        + log_matching_given_t(t.total, n_a, n_b)
                        + log_count
                        + log_t_given_population(t, F, N, n_a, n_b)
                    )
                    if np.isfinite(lp):
                        weights[t_vec] = math.exp(lp)
                total = sum(weights.values())
                if total == 0.0:
                    continue
                for t_vec, w in weights.items():
                    t = freq_from_vector(t_vec)
                    exact = math.exp(log_t_full_conditional(t, f_a, f_b, F))
                    assert w / total == pytest.approx(exact, abs=1e-12)


def test_t_full_conditional_example():
    # one cell with F=4 and two units sampled on each occasion:
    # overlap pmf is (1/6, 4/6, 1/6)
    f_a = FrequencyVector({1: 2})
    f_b = FrequencyVector({1: 2})
    F = FrequencyVector({1: 4})
    pmf = [
        math.exp(log_t_full_conditional(FrequencyVector({1: t}), f_a, f_b, F))
        for t in range(3)
    ]
    assert pmf == pytest.approx([1 / 6, 4 / 6, 1 / 6], rel=1e-12)
