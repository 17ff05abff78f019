from __future__ import annotations

import numpy as np
import pytest
from scipy.special import betainc

from helpers import freq_from_vector, total_variation
from linkpop.core import (
    FrequencyVector,
    KeySchema,
    RecordTable,
    ThetaBlocks,
)
from linkpop.measurement import component_prob
from linkpop.sampler import (
    ChainState,
    NonintegrablePosteriorError,
    NPosterior,
    PriorConfig,
    SamplerConfig,
    draw_C,
    greedy_agreement_matching,
    initial_state,
    run_chain,
    sample_N,
    update_beta,
    update_F,
    update_mu_unit,
    update_t,
    update_theta,
)

SCHEMA4 = KeySchema(k=(4,))


def make_state(
    schema=SCHEMA4,
    xa=((1,), (2,)),
    xb=((1,), (3,)),
    mua=(1, 2),
    mub=(1, 3),
    F=(2, 1, 1, 1),
    t=(1, 0, 0, 0),
    beta=(0.7,),
):
    F_v = freq_from_vector(F)
    return ChainState(
        schema,
        RecordTable(np.asarray(xa)),
        RecordTable(np.asarray(xb)),
        np.asarray(mua),
        np.asarray(mub),
        F_v,
        freq_from_vector(t),
        F_v.total,
        ThetaBlocks(schema),
        np.asarray(beta, dtype=float),
    )


# ---------------------------------------------------------------------------
# population-size posterior
# ---------------------------------------------------------------------------


def test_n_posterior_table_of_quantiles():
    prior = PriorConfig(n_prior_form="inverse_square")
    expected = {
        24: (57, 64, 78),
        25: (56, 62, 74),
        26: (54, 59, 70),
        27: (53, 57, 66),
        28: (51, 55, 63),
        29: (50, 53, 60),
        30: (49, 51, 57),
    }
    for T, quants in expected.items():
        post = NPosterior.from_counts(T, 34, 45, prior)
        got = tuple(post.quantile(q) for q in (0.025, 0.5, 0.975))
        assert got == quants


def test_n_posterior_support_starts_at_union_count():
    prior = PriorConfig(g=2.0)
    post = NPosterior.from_counts(5, 5, 5, prior)
    assert post.support[0] == 5
    # maximal overlap piles mass at the minimum
    assert post.pmf[0] == post.pmf.max()


def test_n_posterior_matches_direct_normalization():
    # brute-force the pmf over a wide window and compare
    from scipy.special import gammaln

    n_a, n_b, T, g = 12, 15, 7, 2.0
    Ns = np.arange(n_a + n_b - T, 20000)
    lw = (
        gammaln(Ns - n_a + 1)
        - gammaln(n_b - T + 1)
        - gammaln(Ns - n_a - n_b + T + 1)
        - (gammaln(Ns + 1) - gammaln(n_b + 1) - gammaln(Ns - n_b + 1))
        + gammaln(Ns - g + 1)
        - gammaln(Ns + 1)
    )
    w = np.exp(lw - lw.max())
    pmf = w / w.sum()
    post = NPosterior.from_counts(T, n_a, n_b, PriorConfig(g=g))
    assert np.allclose(post.pmf, pmf[: post.pmf.size], rtol=1e-9, atol=1e-15)
    assert pmf[post.pmf.size :].sum() < 1e-11


def test_n_posterior_nonintegrable_raises():
    with pytest.raises(NonintegrablePosteriorError):
        NPosterior.from_counts(0, 3, 3, PriorConfig(g=0.0))


def test_sample_n_distribution():
    rng = np.random.default_rng(7)
    prior = PriorConfig(g=2.0)
    post = NPosterior.from_counts(3, 4, 4, prior)
    draws = np.array([sample_N(3, 4, 4, prior, rng=rng) for _ in range(20000)])
    emp = {int(v): c / draws.size for v, c in zip(*np.unique(draws, return_counts=True))}
    exact = {int(n): float(p) for n, p in zip(post.support, post.pmf)}
    assert total_variation(emp, exact) < 0.01


def test_n_cap_truncates_support():
    prior = PriorConfig(g=2.0, n_cap=12)
    post = NPosterior.from_counts(3, 3, 3, prior)
    assert post.support[-1] == 12
    assert abs(post.pmf.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# full-conditional updates vs enumeration
# ---------------------------------------------------------------------------


def exact_mu_conditional(state: ChainState, which: str, unit: int) -> dict[int, float]:
    """Enumerate the unnormalized full conditional over occupied cells."""
    idx = state.mua_idx if which == "A" else state.mub_idx
    counts = state.counts_a if which == "A" else state.counts_b
    x_codes = state.xa_codes if which == "A" else state.xb_codes
    s = unit - 1
    weights = {}
    for pos in range(state.m):
        resid = state.F_occ[pos] - counts[pos] + (1 if idx[s] == pos else 0)
        lik = 1.0
        for i in range(state.schema.h):
            lik *= component_prob(
                int(x_codes[s, i]),
                int(state.occ_codes[pos, i]),
                float(state.beta[i]),
                state.schema.k[i],
            )
        weights[pos] = resid * lik
    total = sum(weights.values())
    return {pos: w / total for pos, w in weights.items()}


def test_update_mu_unit_matches_enumeration():
    # K=4, N=5, n^S=2 instance from a fixed consistent state
    state = make_state(
        xa=((1,), (2,)),
        xb=((1,), (3,)),
        mua=(1, 2),
        mub=(1, 3),
        F=(2, 1, 1, 1),
        t=(1, 0, 0, 0),
        beta=(0.7,),
    )
    exact = exact_mu_conditional(state, "A", 1)
    rng = np.random.default_rng(0)
    n_draws = 100_000
    tally = np.zeros(state.m)
    for _ in range(n_draws):
        update_mu_unit(state, "A", 1, rng)
        tally[state.mua_idx[0]] += 1
    emp = {pos: tally[pos] / n_draws for pos in range(state.m)}
    assert total_variation(emp, exact) < 0.01


def test_update_mu_unit_degenerate_beta_one():
    state = make_state(beta=(1.0,))
    rng = np.random.default_rng(1)
    for _ in range(25):
        update_mu_unit(state, "A", 1, rng)
        assert state.occ_cells[state.mua_idx[0]] == 1  # must equal its record


def test_update_mu_unit_flat_likelihood_follows_counts():
    state = make_state(beta=(0.0,), F=(5, 1, 1, 1))
    exact = exact_mu_conditional(state, "B", 2)
    rng = np.random.default_rng(2)
    tally = np.zeros(state.m)
    n_draws = 60_000
    for _ in range(n_draws):
        update_mu_unit(state, "B", 2, rng)
        tally[state.mub_idx[1]] += 1
    emp = {pos: tally[pos] / n_draws for pos in range(state.m)}
    assert total_variation(emp, exact) < 0.01


def test_update_t_forced_zero_cases():
    rng = np.random.default_rng(3)
    # no overlap possible when one file is absent from the cell
    state = make_state(
        xa=((1,), (2,)), xb=((3,), (4,)), mua=(1, 2), mub=(3, 4), t=(0, 0, 0, 0)
    )
    update_t(state, rng)
    assert state.T == 0
    # F_j < f^A_j + f^B_j forces overlap: the hypergeometric support is
    # bounded below by f^A_j + f^B_j - F_j
    state = make_state(
        xa=((1,), (1,)), xb=((1,), (1,)), mua=(1, 1), mub=(1, 1), F=(3, 1, 0, 0), t=(1,)
    )
    for _ in range(50):
        update_t(state, rng)
        assert state.t_occ[0] >= 1


def test_update_t_hypergeometric_pmf():
    # F_j = 4, f^A_j = f^B_j = 2 gives pmf (1/6, 4/6, 1/6) on {0, 1, 2}
    state = make_state(
        xa=((1,), (1,)),
        xb=((1,), (1,)),
        mua=(1, 1),
        mub=(1, 1),
        F=(4, 1, 0, 0),
        t=(0, 0, 0, 0),
    )
    rng = np.random.default_rng(4)
    n_draws = 100_000
    tally = np.zeros(3)
    for _ in range(n_draws):
        update_t(state, rng)
        tally[state.t_occ[0]] += 1
    emp = {t: tally[t] / n_draws for t in range(3)}
    assert total_variation(emp, {0: 1 / 6, 1: 4 / 6, 2: 1 / 6}) < 0.01


def test_draw_c_uniform_over_configurations():
    # |A_j| = |B_j| = 2 with t_j = 1: four single-pair configurations, each 1/4
    state = make_state(
        xa=((1,), (1,)),
        xb=((1,), (1,)),
        mua=(1, 1),
        mub=(1, 1),
        F=(4, 1, 0, 0),
        t=(1, 0, 0, 0),
    )
    rng = np.random.default_rng(5)
    n_draws = 100_000
    tally: dict = {}
    for _ in range(n_draws):
        C = draw_C(state, rng)
        key = tuple(C.sorted_pairs())
        tally[key] = tally.get(key, 0) + 1
    emp = {k: v / n_draws for k, v in tally.items()}
    exact = {
        ((1, 1),): 0.25,
        ((1, 2),): 0.25,
        ((2, 1),): 0.25,
        ((2, 2),): 0.25,
    }
    assert total_variation(emp, exact) < 0.02


def test_draw_c_trivial_cases():
    rng = np.random.default_rng(6)
    state = make_state(t=(0, 0, 0, 0))
    assert draw_C(state, rng).T == 0
    state = make_state(
        xa=((2,),), xb=((2,),), mua=(2,), mub=(2,), F=(0, 2, 0, 0), t=(0, 1, 0, 0)
    )
    C = draw_C(state, rng)
    assert C.sorted_pairs() == [(1, 1)]


def test_update_beta_truncated_beta_distribution():
    # fixed (x, mu) with a known hit count; draws must follow the truncated
    # Beta law of the chance-corrected hit rate
    state = make_state(
        xa=((1,), (2,)), xb=((1,), (3,)), mua=(1, 2), mub=(1, 4),
        F=(2, 1, 1, 1), t=(1, 0, 0, 0),
    )
    # hits: A1 (1==1), A2 (2==2), B1 (1==1); B2 differs -> 3 of 4
    hits, n_tot, k_i = 3, 4, 4
    rng = np.random.default_rng(7)
    n_draws = 100_000
    draws = np.empty(n_draws)
    for i in range(n_draws):
        update_beta(state, rng)
        draws[i] = state.beta[0]
    eta = (draws * (k_i - 1) + 1) / k_i
    a, b = hits + 1, n_tot - hits + 1
    lo = betainc(a, b, 1 / k_i)

    def cdf(x):
        return (betainc(a, b, x) - lo) / (1 - lo)

    xs = np.sort(eta)
    theory = cdf(xs)
    empirical = np.arange(1, n_draws + 1) / n_draws
    ks = np.max(np.abs(theory - empirical))
    assert ks < 0.01


def test_update_theta_conjugacy_moments():
    # single block, uniform prior, F concentrated on cell 1 of K=2
    schema = KeySchema(k=(2,))
    state = ChainState(
        schema,
        RecordTable(np.array([[1]])),
        RecordTable(np.array([[1]])),
        np.array([1]),
        np.array([1]),
        FrequencyVector({1: 2}),
        FrequencyVector({1: 1}),
        2,
        ThetaBlocks(schema),
        np.array([0.5]),
    )
    rng = np.random.default_rng(8)
    prior = PriorConfig()
    n_draws = 100_000
    acc = np.zeros(2)
    acc2 = np.zeros(2)
    for _ in range(n_draws):
        update_theta(state, prior, rng)
        acc += state.theta.probs[0]
        acc2 += state.theta.probs[0] ** 2
    mean = acc / n_draws
    # posterior is Dirichlet(3, 1): mean (3/4, 1/4), var p(1-p)/5
    se = np.sqrt((3 / 4) * (1 / 4) / 5 / n_draws)
    assert abs(mean[0] - 0.75) < 3 * se
    var = acc2[0] / n_draws - mean[0] ** 2
    assert abs(var - (3 / 4) * (1 / 4) / 5) < 0.001


def test_update_theta_two_blocks_use_margins():
    schema = KeySchema(k=(2, 2), independence_pattern=((1,), (2,)))
    F = FrequencyVector({1: 3, 4: 1})  # cells (1,1) x3 and (2,2) x1
    state = ChainState(
        schema,
        RecordTable(np.array([[1, 1]])),
        RecordTable(np.array([[1, 1]])),
        np.array([1]),
        np.array([1]),
        F,
        FrequencyVector({1: 1}),
        4,
        ThetaBlocks(schema),
        np.array([0.5, 0.5]),
    )
    rng = np.random.default_rng(9)
    n_draws = 50_000
    acc1 = 0.0
    acc2 = 0.0
    for _ in range(n_draws):
        update_theta(state, PriorConfig(), rng)
        acc1 += state.theta.probs[0][0]
        acc2 += state.theta.probs[1][0]
    # margins of F are (3, 1) for both variables: posterior Dirichlet(4, 2)
    assert abs(acc1 / n_draws - 4 / 6) < 0.005
    assert abs(acc2 / n_draws - 4 / 6) < 0.005


def test_update_f_trivial_residual():
    # N at its minimum leaves no residual mass: F = f^A + f^B - t exactly
    state = make_state(
        xa=((1,), (2,)), xb=((1,), (3,)), mua=(1, 2), mub=(1, 3),
        F=(2, 1, 1, 1), t=(1, 0, 0, 0),
    )
    prior = PriorConfig(g=2.0, n_cap=3)  # support of N|T=1 collapses to {3}
    rng = np.random.default_rng(10)
    update_F(state, prior, rng)
    assert state.N == 3
    assert dict(zip(state.occ_cells.tolist(), state.F_occ.tolist())) == {1: 1, 2: 1, 3: 1}


def test_update_f_point_mass_theta():
    state = make_state()
    state.theta = ThetaBlocks(SCHEMA4, [np.array([0.0, 0.0, 0.0, 1.0])])
    prior = PriorConfig(g=2.0, n_cap=10)
    rng = np.random.default_rng(11)
    update_F(state, prior, rng)
    base = {1: 1, 2: 1, 3: 1}  # f^A + f^B - t
    extras = state.N - 3
    expected = dict(base)
    if extras:
        expected[4] = extras
    assert dict(zip(state.occ_cells.tolist(), state.F_occ.tolist())) == expected


# ---------------------------------------------------------------------------
# initialization, determinism, chain behavior
# ---------------------------------------------------------------------------


def test_greedy_matching_lexicographic_first_come():
    pairs = greedy_agreement_matching(np.array([5, 5, 7]), np.array([7, 5, 5]))
    assert pairs == [(1, 2), (2, 3), (3, 1)]


def test_initial_state_is_consistent():
    rng = np.random.default_rng(12)
    schema = KeySchema(k=(3, 2))
    xa = RecordTable(np.column_stack([rng.integers(1, 4, 12), rng.integers(1, 3, 12)]))
    xb = RecordTable(np.column_stack([rng.integers(1, 4, 9), rng.integers(1, 3, 9)]))
    state = initial_state(xa, xb, schema, PriorConfig(), rng)
    state.to_latent().validate(schema)
    assert state.N >= max(12, 9)


def test_run_chain_zero_retained():
    schema = KeySchema(k=(3,))
    xa = RecordTable(np.array([[1], [2]]))
    xb = RecordTable(np.array([[1], [3]]))
    cfg = SamplerConfig(iterations=0, burn_in=0, seed=1)
    draws = run_chain(xa, xb, schema, PriorConfig(), cfg)
    assert draws.retained == 0


def test_run_chain_deterministic():
    rng = np.random.default_rng(13)
    schema = KeySchema(k=(4, 2))
    xa = RecordTable(np.column_stack([rng.integers(1, 5, 10), rng.integers(1, 3, 10)]))
    xb = RecordTable(np.column_stack([rng.integers(1, 5, 8), rng.integers(1, 3, 8)]))
    cfg = SamplerConfig(
        iterations=120, burn_in=20, seed=99, inner_sweeps=2, theta_margins=("2=1",)
    )
    one = run_chain(xa, xb, schema, PriorConfig(), cfg)
    two = run_chain(xa, xb, schema, PriorConfig(), cfg)
    assert np.array_equal(one.N, two.N)
    assert np.array_equal(one.T, two.T)
    for name in one.params:
        assert np.array_equal(one.params[name], two.params[name])
    assert np.array_equal(one.pair_counts, two.pair_counts)


def test_run_chain_states_stay_valid():
    rng = np.random.default_rng(14)
    schema = KeySchema(k=(4, 2))
    xa = RecordTable(np.column_stack([rng.integers(1, 5, 6), rng.integers(1, 3, 6)]))
    xb = RecordTable(np.column_stack([rng.integers(1, 5, 7), rng.integers(1, 3, 7)]))
    cfg = SamplerConfig(iterations=150, burn_in=0, seed=3, validate_states=True)
    draws = run_chain(xa, xb, schema, PriorConfig(), cfg)
    assert draws.retained == 150
    assert (draws.N >= 7).all()


def test_trace_files_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    schema = KeySchema(k=(3,))
    xa = RecordTable(rng.integers(1, 4, (5, 1)))
    xb = RecordTable(rng.integers(1, 4, (6, 1)))
    cfg = SamplerConfig(iterations=40, burn_in=10, seed=5)
    draws = run_chain(xa, xb, schema, PriorConfig(), cfg)
    trace = tmp_path / "trace.tsv"
    probs = tmp_path / "pair_probs.tsv"
    draws.write_trace(trace)
    draws.write_pair_probs(probs)
    lines = trace.read_text().splitlines()
    assert lines[0].split("\t") == ["iter", "N", "T", "beta_1"]
    assert len(lines) == draws.retained + 1
    header = probs.read_text().splitlines()[0]
    assert header.split("\t") == ["a", "b", "posterior_probability"]


def test_file_specific_beta_updates_use_own_hit_counts():
    # x^A agrees with mu^A everywhere, x^B nowhere: the two rows of beta must
    # follow the truncated-Beta laws of their own files
    state = make_state(
        xa=((1,), (2,)),
        xb=((2,), (4,)),
        mua=(1, 2),
        mub=(1, 3),
        F=(2, 1, 1, 1),
        t=(1, 0, 0, 0),
        beta=((0.9,), (0.9,)),
    )
    rng = np.random.default_rng(31)
    n_draws = 40_000
    draws = np.empty((n_draws, 2))
    for i in range(n_draws):
        update_beta(state, rng)
        draws[i] = state.beta[:, 0]
    # file A: 2 hits of 2; file B: 0 hits of 2; k = 4
    a_mean_eta = (draws[:, 0].mean() * 3 + 1) / 4
    b_mean_eta = (draws[:, 1].mean() * 3 + 1) / 4
    from scipy.integrate import quad

    def trunc_beta_mean(a, b):
        num = quad(lambda x: x * x ** (a - 1) * (1 - x) ** (b - 1), 0.25, 1)[0]
        den = quad(lambda x: x ** (a - 1) * (1 - x) ** (b - 1), 0.25, 1)[0]
        return num / den

    assert abs(a_mean_eta - trunc_beta_mean(3, 1)) < 0.005
    assert abs(b_mean_eta - trunc_beta_mean(1, 3)) < 0.005


def test_file_specific_beta_chain_runs_deterministically():
    rng = np.random.default_rng(21)
    schema = KeySchema(k=(8, 6, 4))
    from linkpop.core import RecordTable as RT

    x_a = RT(np.column_stack([rng.integers(1, k + 1, 12) for k in schema.k]))
    x_b = RT(np.column_stack([rng.integers(1, k + 1, 10) for k in schema.k]))
    cfg = SamplerConfig(
        iterations=200, burn_in=50, seed=2, file_specific_beta=True, draw_c=False
    )
    draws = run_chain(x_a, x_b, schema, PriorConfig(), cfg)
    assert set(draws.params) == {
        f"beta_{f}_{i}" for f in ("a", "b") for i in (1, 2, 3)
    }
    again = run_chain(x_a, x_b, schema, PriorConfig(), cfg)
    assert np.array_equal(draws.N, again.N)
    for name in draws.params:
        assert np.array_equal(draws.params[name], again.params[name])
