import numpy as np
import pytest

from progexp import (
    BridgeLognormal,
    GridProcess,
    TestReport,
    conditional_increment_lemma_check,
    decompose_single,
    density_martingale_test,
    g_features,
    increment_regression_test,
    linear_martingale,
    make_grid,
    martingale_test,
    shrinkage_check,
    simulate_brownian,
)
from progexp.lab import BridgeSlope, _verdict, default_pairs, f_features, q_integral_lattice

N = 100_000


@pytest.fixture(scope="module")
def coarse():
    return simulate_brownian(make_grid(1.0, 4), 1, N, seed=51)


def test_default_pairs_are_quarters():
    assert default_pairs(make_grid(2.0, 8)) == [(0.0, 0.5), (0.5, 1.0), (1.0, 1.5), (1.5, 2.0)]
    assert default_pairs(make_grid(1.0, 50))[1] == pytest.approx((0.24, 0.5))


@pytest.mark.parametrize("z, verdict", [
    (0.0, "pass"), (-3.99, "pass"), (4.0, "inconclusive"), (-9.5, "inconclusive"),
    (10.0, "inconclusive"), (10.01, "fail"), (-250.0, "fail"),
])
def test_verdict_thresholds(z, verdict):
    assert _verdict(z, 4.0, 10.0) == verdict


def test_brownian_passes(coarse):
    rep = martingale_test(coarse.component(0), f_features(coarse))
    assert rep.passed and rep.n_paths == N
    assert all(np.isfinite(r["z"]) and r["se"] > 0 for r in rep.records)


def test_deterministic_drift_fails_as_predicted(coarse):
    g = coarse.grid
    W = coarse.component(0)
    N_ = W + GridProcess.deterministic(g, N, lambda t: t)
    rep = martingale_test(N_, {"1": GridProcess.deterministic(g, N, np.ones_like)})
    for r in rep.records:
        s, t = r["pair"]
        # the mean increment is t - s, so z is (t - s) / SE up to O(1) noise
        assert r["z"] == pytest.approx((t - s) / r["se"], abs=5)
        assert r["verdict"] == "fail"


def test_degenerate_feature_is_skipped(coarse):
    rep = martingale_test(coarse.component(0), f_features(coarse))
    assert any("degenerate" in note for note in rep.notes)
    assert {r["feature"] for r in rep.records if r["pair"][0] == 0.0} == {"1"}


def test_regression_matches_statsmodels_hc0(coarse):
    sm = pytest.importorskip("statsmodels.api")
    g = coarse.grid
    W = coarse.component(0)
    rng = np.random.default_rng(0)
    y = W + GridProcess(g, np.cumsum(rng.normal(size=(N, 5)) * 0.1, axis=1))
    rep = increment_regression_test(y, {"W_s": W}, pairs=[(0.25, 0.75)])
    fit = sm.OLS(y.at(0.75) - y.at(0.25), sm.add_constant(W.at(0.25))).fit(cov_type="HC0")
    got = {r["feature"]: r for r in rep.records}
    np.testing.assert_allclose([got["1"]["mean"], got["W_s"]["mean"]], fit.params, rtol=1e-9)
    np.testing.assert_allclose([got["1"]["se"], got["W_s"]["se"]], fit.bse, rtol=1e-9)


def test_size_control():
    # 200 independent true-martingale tests at 1e4 paths: at least 97% must pass
    g = make_grid(1.0, 4)
    passed = 0
    for rep in range(200):
        ens = simulate_brownian(g, 1, 10_000, seed=1000, stream_offset=rep * 10_000)
        passed += martingale_test(ens.component(0), f_features(ens)).passed
    assert passed / 200 >= 0.97


def test_records_schema(coarse):
    rep = martingale_test(coarse.component(0), f_features(coarse))
    rec = rep.to_records("demo", "martingale_test")[0]
    assert list(rec) == ["scenario", "op", "pair", "feature", "z", "se", "verdict"]


def test_density_martingale(bridge_case):
    _, ens, model, _ = bridge_case
    rep = density_martingale_test(model, ens, np.exp([-1.0, 0.0, 1.0]))
    assert rep.passed


def test_lemma_constant_and_adapted_vanish(bridge_case):
    _, ens, model, sample = bridge_case
    rep, M = conditional_increment_lemma_check(2.5, ens, sample)
    assert np.all(M.values == 0.0) and rep.passed
    adapted = decompose_single(linear_martingale(), ens, model, sample).drift_after
    _, M = conditional_increment_lemma_check(adapted, ens, sample)
    assert np.all(M.values == 0.0)


@pytest.mark.parametrize("before", [True, False])
def test_lemma_bridge_slope_passes(bridge_case, before):
    _, ens, model, sample = bridge_case
    rep, M = conditional_increment_lemma_check(BridgeSlope(model, before), ens, sample,
                                               g_features(ens, sample, model))
    assert rep.passed


def test_lemma_without_projection_raises(bridge_case):
    _, ens, _, sample = bridge_case
    with pytest.raises(TypeError):
        conditional_increment_lemma_check(object(), ens, sample)


@pytest.fixture(scope="module")
def small_bridge():
    ens = simulate_brownian(make_grid(1.0, 50), 1, 400, seed=61)
    model = BridgeLognormal(2.0)
    return model, ens, model.sample(ens)


def test_shrinkage_null_martingale(small_bridge):
    rep = shrinkage_check(*small_bridge, linear_martingale(0.0, 0.0), control=False)
    assert np.all(rep.lhs.values == 0.0) and np.all(rep.rhs.values == 0.0)


@pytest.mark.parametrize("m", [(1.0, 0.0), (1.0, 0.5)])
def test_shrinkage_identity(small_bridge, m):
    rep = shrinkage_check(*small_bridge, linear_martingale(*m))
    assert rep.max_discrepancy < 1e-6
    assert rep.q_integral_max < 1e-6
    assert np.all(rep.sup_discrepancy >= 0)
    assert np.mean(rep.control_discrepancy > 1e-2) >= 0.99


def test_shrinkage_rhs_is_jeulin_yor_drift(small_bridge):
    model, ens, sample = small_bridge
    rep = shrinkage_check(model, ens, sample, linear_martingale())
    jy = decompose_single(linear_martingale(), ens, model, sample, bracket="analytic")
    np.testing.assert_allclose(rep.rhs.values, jy.drift_before.values, atol=1e-12)


def test_shrinkage_needs_bridge(small_bridge):
    from progexp import Independent

    _, ens, sample = small_bridge
    with pytest.raises(TypeError):
        shrinkage_check(Independent(), ens, sample, linear_martingale())


def test_q_integral_lattice():
    assert q_integral_lattice(BridgeLognormal(2.0), make_grid(1.0, 19)) < 1e-6


def test_report_aggregation():
    rep = TestReport(records=[{"pair": (0, 1), "z": 3.0}, {"pair": (1, 2), "z": -12.0}])
    assert rep.max_abs_z == 12.0 and rep.verdict == "fail" and not rep.passed
    assert rep.max_abs_z_at((0, 1)) == 3.0
