from __future__ import annotations

import math

import numpy as np
import pytest

from helpers import total_variation
from linkpop.core import KeySchema
from linkpop.sampler import PriorConfig, SamplerConfig, run_chain
from linkpop.simulate import (
    Scenario,
    generate_pair,
    run_study,
    scenario_schema,
    scenario_theta,
)


def test_scenario_schemas():
    assert scenario_schema(1).k == (64, 16, 4)
    assert scenario_schema(2).k == (64, 16, 4)
    assert scenario_schema(3).k == (32, 16, 4, 4, 2, 2)
    assert scenario_schema(1).independence_pattern == ((1,), (2,), (3,))
    assert scenario_schema(2).independence_pattern == ((1, 2, 3),)
    with pytest.raises(ValueError):
        scenario_schema(4)


def test_scenario_theta_sums_to_one():
    for sid in (1, 2, 3):
        theta = scenario_theta(Scenario(id=sid, n=70, beta_true=0.9))
        assert theta.shape == (scenario_schema(sid).K,)
        assert abs(theta.sum() - 1.0) < 1e-12
        assert np.all(theta >= 0)


def test_scenario_one_is_product_of_ramps():
    sc = Scenario(id=1, n=70, beta_true=0.9)
    theta = scenario_theta(sc)
    schema = sc.schema

    def ramp(k):
        b = np.arange(1, k + 1, dtype=float)
        return b / b.sum()

    margins = [ramp(k) for k in schema.k]
    # check a handful of cells against the explicit product
    rng = np.random.default_rng(0)
    for _ in range(50):
        codes = [int(rng.integers(1, k + 1)) for k in schema.k]
        j = schema.cells_of(np.array([codes]))[0]
        expected = math.prod(margins[i][codes[i] - 1] for i in range(3))
        assert theta[j - 1] == pytest.approx(expected, rel=1e-12)
    # single-variable sanity: k=4 ramp is (0.1, 0.2, 0.3, 0.4)
    assert np.allclose(ramp(4), [0.1, 0.2, 0.3, 0.4])


def test_scenario_two_conditional_slices():
    sc = Scenario(id=2, n=70, beta_true=0.9)
    theta = scenario_theta(sc).reshape(64, 16, 4)
    # slice at third-variable value 2: second-variable law proportional to j^2
    slice_ = theta[:, :, 1].sum(axis=0)
    expected = np.arange(1, 17, dtype=float) ** 2
    expected /= expected.sum()
    assert np.allclose(slice_ / slice_.sum(), expected, rtol=1e-10)
    # third-variable margin proportional to j
    margin3 = theta.sum(axis=(0, 1))
    assert np.allclose(margin3, np.arange(1, 5) / 10.0, rtol=1e-10)


def test_generate_pair_noise_free_when_beta_one():
    sc = Scenario(id=1, n=40, beta_true=1.0, N_true=60)
    theta = scenario_theta(sc)
    rng = np.random.default_rng(1)
    x_a, x_b, c_true, f_true = generate_pair(sc, theta, rng)
    # matched pairs agree exactly on every field
    for a, b in c_true.sorted_pairs():
        assert np.array_equal(x_a.codes[a - 1], x_b.codes[b - 1])
    assert f_true.total == 60


def test_generate_pair_full_census():
    sc = Scenario(id=1, n=50, beta_true=1.0, N_true=50)
    theta = scenario_theta(sc)
    rng = np.random.default_rng(2)
    _, _, c_true, _ = generate_pair(sc, theta, rng)
    assert c_true.T == 50


def test_generate_pair_overlap_is_hypergeometric():
    sc = Scenario(id=1, n=8, beta_true=1.0, N_true=20)
    theta = scenario_theta(sc)
    rng = np.random.default_rng(3)
    n_rep = 10_000
    tally: dict[int, int] = {}
    for _ in range(n_rep):
        _, _, c_true, _ = generate_pair(sc, theta, rng)
        tally[c_true.T] = tally.get(c_true.T, 0) + 1
    emp = {t: c / n_rep for t, c in tally.items()}
    exact = {}
    for t in range(0, 9):
        exact[t] = (
            math.comb(8, t) * math.comb(20 - 8, 8 - t) / math.comb(20, 8)
        )
    assert total_variation(emp, exact) < 0.02


def test_generate_pair_population_mean():
    # realized F over replicates has mean N_true * theta (small-K scenario)
    schema = KeySchema(k=(2, 2), independence_pattern=((1,), (2,)))
    sc = Scenario(id=1, n=10, beta_true=1.0, N_true=30, schema=schema)
    theta = np.array([0.4, 0.3, 0.2, 0.1])
    rng = np.random.default_rng(4)
    n_rep = 4000
    acc = np.zeros(4)
    for _ in range(n_rep):
        _, _, _, f_true = generate_pair(sc, theta, rng)
        for j, c in f_true.items():
            acc[j - 1] += c
    mean = acc / n_rep
    expected = 30 * theta
    se = np.sqrt(30 * theta * (1 - theta) / n_rep)
    assert np.all(np.abs(mean - expected) < 4 * se)


def test_posterior_concentrates_on_true_t_when_noise_free():
    # beta = 1 with unique exact agreements: under a flat population-size
    # prior the posterior mode of T is T_true in nearly every replicate
    schema = KeySchema(
        k=(8, 8, 4, 4, 2), independence_pattern=tuple((i,) for i in range(1, 6))
    )
    sc = Scenario(id=1, n=25, beta_true=1.0, N_true=32, schema=schema, seed=0)
    theta = np.full(schema.K, 1.0 / schema.K)
    rng = np.random.default_rng(5)
    hits = 0
    n_rep = 10
    for rep in range(n_rep):
        while True:
            x_a, x_b, c_true, _ = generate_pair(sc, theta, rng)
            cells_a = schema.cells_of(x_a.codes)
            cells_b = schema.cells_of(x_b.codes)
            # keep only replicates where exact agreement identifies the truth
            agree = sum(1 for ca in cells_a for cb in cells_b if ca == cb)
            if agree == c_true.T:
                break
        cfg = SamplerConfig(iterations=2000, burn_in=500, seed=rep, draw_c=False)
        draws = run_chain(x_a, x_b, schema, PriorConfig(g=1.0), cfg)
        values, counts = np.unique(draws.T, return_counts=True)
        mode = int(values[np.argmax(counts)])
        hits += mode == c_true.T
    assert hits >= 9


def test_run_study_zero_replicates():
    sc = Scenario(id=1, n=20, beta_true=0.9, N_true=30, replicates=0, seed=1)
    report = run_study(sc, methods=("hybrid",))
    assert report.methods == {}


def test_run_study_small_smoke(tmp_path):
    schema = KeySchema(k=(8, 4), independence_pattern=((1,), (2,)))
    sc = Scenario(id=1, n=15, beta_true=0.95, N_true=20, replicates=3, seed=9, schema=schema)
    cfg = SamplerConfig(iterations=400, burn_in=100, inner_sweeps=2)
    report = run_study(sc, methods=("hier", "jaro", "hybrid"), config=cfg)
    assert set(report.methods) == {"hier", "jaro", "hybrid"}
    for summary in report.methods.values():
        assert summary.replicates == 3
        assert 0.0 <= summary.coverage <= 1.0
        assert summary.mean_length >= 0
        assert 0.0 <= summary.mean_fmr1 <= 1.0
    report.write_report(tmp_path / "report.tsv")
    report.write_summary_json(tmp_path / "summary.json")
    lines = (tmp_path / "report.tsv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("method\te_n")
    import json

    payload = json.loads((tmp_path / "summary.json").read_text())
    assert payload["scenario"]["replicates"] == 3
    assert set(payload["methods"]) == {"hier", "jaro", "hybrid"}


def test_run_study_deterministic_and_worker_independent():
    schema = KeySchema(k=(6, 3), independence_pattern=((1,), (2,)))
    sc = Scenario(id=1, n=10, beta_true=0.9, N_true=14, replicates=2, seed=4, schema=schema)
    cfg = SamplerConfig(iterations=200, burn_in=50, inner_sweeps=2)
    one = run_study(sc, methods=("hier", "hybrid"), config=cfg)
    two = run_study(sc, methods=("hier", "hybrid"), config=cfg)
    assert one.raw == two.raw
    parallel = run_study(sc, methods=("hier", "hybrid"), config=cfg, workers=2)
    assert parallel.raw == one.raw


def test_scenario_validates_sample_size():
    with pytest.raises(ValueError):
        Scenario(id=1, n=101, beta_true=0.9, N_true=100)
