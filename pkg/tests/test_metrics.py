"""Tests for Monte Carlo metrics and the exact three-object geometry."""

import math
from fractions import Fraction

import numpy as np
import pytest

from storagebalance.allocation import (
    UnsupportedDesignError,
    build_block_design,
    build_clustering,
    build_cyclic,
    build_cyclic_xor,
    build_single_choice,
)
from storagebalance.metrics import (
    BandCheck,
    ExperimentRow,
    MetricEstimate,
    asymptotic_band_check,
    estimate_I,
    estimate_metrics,
    estimate_P_sigma,
    exact_p_sigma_k3,
    exact_region_k3,
    rows_to_csv,
    t_star_series,
    wilson_interval,
)

SEED = 987654321


# ---------------------------------------------------------------------------
# Wilson interval and estimate plumbing
# ---------------------------------------------------------------------------


def test_wilson_interval_contains_estimate():
    for s, t in ((0, 10), (10, 10), (3, 10), (0, 100000), (99999, 100000)):
        lo, hi = wilson_interval(s, t)
        assert 0.0 <= lo <= s / t <= hi <= 1.0


def test_wilson_interval_narrows():
    lo1, hi1 = wilson_interval(50, 100)
    lo2, hi2 = wilson_interval(5000, 10000)
    assert (hi2 - lo2) < (hi1 - lo1)


def test_metric_estimate_validates():
    with pytest.raises(ValueError):
        MetricEstimate(mean=0.5, stderr=0.1, ci95_lo=0.6, ci95_hi=0.7, trials=10, seed=0)


# ---------------------------------------------------------------------------
# Monte Carlo estimates
# ---------------------------------------------------------------------------


def test_full_replication_imbalance_is_one():
    est = estimate_I(build_cyclic(4, 4), sigma=2.0, trials=200, master_seed=SEED)
    assert est.mean == pytest.approx(1.0, abs=1e-12)
    assert est.stderr == pytest.approx(0.0, abs=1e-12)
    assert est.quantiles == pytest.approx({"q05": 1.0, "q50": 1.0, "q95": 1.0}, abs=1e-12)


def test_single_choice_mean_imbalance_near_gumbel_mean():
    est = estimate_I(build_single_choice(100, 1), sigma=1.0, trials=10_000, master_seed=SEED)
    target = math.log(100) + 0.5772156649
    assert abs(est.mean - target) / target < 0.05


def test_estimates_are_deterministic_and_paired():
    a = estimate_metrics(build_cyclic(10, 2), 8.0, 500, SEED)
    b = estimate_metrics(build_cyclic(10, 2), 8.0, 500, SEED)
    assert a[0] == b[0] and a[1] == b[1]


def test_more_choices_improve_both_metrics_on_paired_seeds():
    p1, i1 = estimate_metrics(build_cyclic(100, 1), 80.0, 400, SEED)
    p2, i2 = estimate_metrics(build_cyclic(100, 2), 80.0, 400, SEED)
    assert i2.mean < i1.mean
    assert p2.mean >= p1.mean


def test_p_sigma_monotone_in_sigma():
    alloc = build_cyclic(12, 2)
    means = []
    for sigma in (4.0, 6.0, 8.0, 10.0):
        est, _ = estimate_metrics(alloc, sigma, 600, SEED)
        means.append(est.mean)
    for a, b in zip(means, means[1:]):
        assert b <= a + 3.0 * math.sqrt(0.25 / 600)


def test_t_star_series_worker_invariance(monkeypatch):
    import storagebalance.metrics as metrics_mod

    monkeypatch.setattr(metrics_mod, "BATCH_TRIALS", 32)  # force several chunks
    alloc = build_block_design(3)
    seq = t_star_series(alloc, 4.0, 150, SEED, workers=1)
    par = t_star_series(alloc, 4.0, 150, SEED, workers=3)
    assert np.array_equal(seq, par)


def test_solver_failure_carries_trial_index(monkeypatch):
    import storagebalance.loadsolver as ls

    real = ls.min_max_load
    calls = {"n": 0}

    def flaky(matrices, rho):
        calls["n"] += 1
        if calls["n"] == 3:
            raise ls.NumericalFailureError("synthetic solver failure")
        return real(matrices, rho)

    monkeypatch.setattr(ls, "min_max_load", flaky)
    with pytest.raises(ls.NumericalFailureError, match="trial 2"):
        t_star_series(build_block_design(3), 4.0, 10, SEED)


def test_estimate_requires_positive_inputs():
    with pytest.raises(ValueError):
        estimate_P_sigma(build_cyclic(3, 2), 0.0, 10, SEED)
    with pytest.raises(ValueError):
        estimate_P_sigma(build_cyclic(3, 2), 1.0, 0, SEED)


# ---------------------------------------------------------------------------
# Exact k = 3 geometry
# ---------------------------------------------------------------------------


def test_exact_p_sigma_three_node_values():
    assert exact_p_sigma_k3(build_cyclic(3, 1), 3) == 0.0
    assert exact_p_sigma_k3(build_cyclic(3, 2), 3) == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert exact_p_sigma_k3(build_cyclic(3, 3), 3) == 1.0


def test_estimated_p_sigma_boundary_cases():
    # single-choice at the capacity boundary has measure zero; full
    # replication at sigma = n is stable with probability one
    assert estimate_P_sigma(build_cyclic(3, 1), 3.0, 5000, SEED).mean == 0.0
    assert estimate_P_sigma(build_cyclic(3, 3), 3.0, 5000, SEED).mean == 1.0


def test_exact_region_vertices_d2():
    region = exact_region_k3(build_cyclic(3, 2), 3)
    verts = {tuple(float(c) for c in v) for v in region.polygon_vertices()}
    expected = {
        (0.0, 1.0, 2.0),
        (0.0, 2.0, 1.0),
        (1.0, 0.0, 2.0),
        (1.0, 2.0, 0.0),
        (2.0, 0.0, 1.0),
        (2.0, 1.0, 0.0),
    }
    assert verts == expected
    assert region.p_sigma() == Fraction(2, 3)


def test_exact_region_d1_degenerate_point():
    region = exact_region_k3(build_cyclic(3, 1), 3)
    assert [tuple(map(float, v)) for v in region.polygon_vertices()] == [(1.0, 1.0, 1.0)]


def test_exact_small_sigma_fully_supported():
    assert exact_p_sigma_k3(build_cyclic(3, 2), 1.5) == 1.0
    # cross-check with Monte Carlo at moderate size
    est = estimate_P_sigma(build_cyclic(3, 2), 1.5, 20_000, SEED)
    assert est.mean == 1.0


def test_exact_agrees_with_monte_carlo_grid():
    trials = 20_000
    for d in (1, 2, 3):
        alloc = build_cyclic(3, d)
        for sigma in (1.5, 2.4, 3.0):
            exact = exact_p_sigma_k3(alloc, sigma)
            est = estimate_P_sigma(alloc, sigma, trials, SEED)
            slack = 3.0 * max(est.stderr, 1e-4)
            assert abs(est.mean - exact) <= slack, (d, sigma, exact, est.mean)


def test_exact_region_rejects_unsupported():
    with pytest.raises(UnsupportedDesignError):
        exact_p_sigma_k3(build_cyclic(4, 2), 3)
    with pytest.raises(UnsupportedDesignError):
        exact_p_sigma_k3(build_cyclic_xor(3, 2, 2), 3)


def test_exact_region_contains_origin():
    region = exact_region_k3(build_cyclic(3, 2), 3)
    for normal, offset in region.halfspaces:
        assert offset >= 0  # origin satisfies normal . 0 <= offset


# ---------------------------------------------------------------------------
# Band checks and report rows
# ---------------------------------------------------------------------------


def test_band_check_single_choice():
    report = asymptotic_band_check(
        build_single_choice(100, 1), trials=2000, master_seed=SEED, sigma=1.0
    )
    main = report["checks"][0]
    assert main["name"] == "mean_imbalance_over_prediction"
    assert main["passed"]
    assert report["transition"]["below"]["p_sigma"] >= 0.9
    assert report["transition"]["above"]["p_sigma"] <= 0.1


def test_band_check_cyclic_small_d():
    report = asymptotic_band_check(
        build_cyclic(200, 3), trials=500, master_seed=SEED, transition_trials=1000
    )
    main = report["checks"][0]
    assert main["name"] == "mean_imbalance_over_band_hi"
    assert 0.4 <= main["observed"] <= 1.2
    # robustness flips across the predicted transition: probe at 0.5d and 3d
    assert report["transition"]["below"]["b"] == pytest.approx(1.5)
    assert report["transition"]["above"]["b"] == pytest.approx(9.0)
    assert report["transition"]["below"]["p_sigma"] >= 0.9
    assert report["transition"]["above"]["p_sigma"] <= 0.1


def test_band_check_dataclass():
    chk = BandCheck(name="x", observed=0.5, lo=0.4, hi=1.2)
    assert chk.passed
    assert not BandCheck(name="x", observed=1.3, lo=0.4, hi=1.2).passed


def test_experiment_row_csv_schema():
    p, i = estimate_metrics(build_cyclic(5, 2), 3.0, 100, SEED)
    row = ExperimentRow(
        kind="cyclic", n=5, k=5, d=2, r=1, sigma=3.0, trials=100, seed=SEED, p=p, imbalance=i
    )
    text = rows_to_csv([row])
    header, line = text.strip().split("\n")
    assert header == (
        "kind,n,k,d,r,sigma,trials,p_sigma,p_lo,p_hi,"
        "i_mean,i_stderr,i_q05,i_q50,i_q95,seed"
    )
    fields = line.split(",")
    assert fields[0] == "cyclic" and fields[-1] == str(SEED)
    assert float(fields[7]) == p.mean
