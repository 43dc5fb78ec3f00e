import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progexp import GridProcess, covariation, ito_integrate, make_grid, simulate_brownian
from progexp.grid import keyed_normals, keyed_uniforms


@pytest.mark.parametrize("T, K, nodes", [
    (1.0, 4, [0, 0.25, 0.5, 0.75, 1.0]),
    (2.0, 2, [0, 1.0, 2.0]),
])
def test_make_grid_nodes(T, K, nodes):
    g = make_grid(T, K)
    np.testing.assert_allclose(g.nodes, nodes, rtol=0, atol=1e-15)
    assert g.nodes[-1] == T
    assert g.dt == pytest.approx(T / K)


@pytest.mark.parametrize("T, K", [(1.0, 1), (1.0, 0), (0.0, 4), (-1.0, 4), (np.inf, 4), (1.0, 2.5)])
def test_make_grid_rejects(T, K):
    with pytest.raises(ValueError):
        make_grid(T, K)


def test_snap_convention():
    g = make_grid(1.0, 4)
    tau = np.array([0.0, 0.1, 0.25, 0.26, 1.0, 1.01, 5.0])
    np.testing.assert_array_equal(g.snap(tau), [0, 1, 1, 2, 4, 5, 5])


def test_index_of_rejects_off_grid():
    g = make_grid(1.0, 4)
    assert g.index_of(0.5) == 2
    with pytest.raises(ValueError):
        g.index_of(0.3)


def test_brownian_starts_at_zero():
    ens = simulate_brownian(make_grid(1.0, 8), 3, 50, seed=1)
    assert np.all(ens.values[:, 0, :] == 0.0)


def test_terminal_moments():
    T, n = 1.5, 100_000
    ens = simulate_brownian(make_grid(T, 10), 1, n, seed=2)
    wT = ens.terminal(0)
    assert abs(wT.mean()) < 4 * np.sqrt(T / n)
    assert abs(wT.var() / T - 1) < 0.05


def test_increments_are_independent_gaussian():
    from scipy import stats

    ens = simulate_brownian(make_grid(1.0, 4), 2, 20_000, seed=8)
    dW = np.diff(ens.values, axis=1) / np.sqrt(0.25)
    assert stats.kstest(dW.ravel(), "norm").pvalue > 1e-3
    c = np.corrcoef(dW[:, 0, 0], dW[:, 1, 0])[0, 1]
    assert abs(c) < 4 / np.sqrt(20_000)


def test_same_seed_bit_identical():
    g = make_grid(1.0, 16)
    a = simulate_brownian(g, 2, 300, seed=5)
    b = simulate_brownian(g, 2, 300, seed=5)
    c = simulate_brownian(g, 2, 300, seed=6)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


@pytest.mark.parametrize("threads", ["1", "3", "8"])
def test_thread_count_does_not_change_paths(monkeypatch, threads):
    g = make_grid(1.0, 8)
    monkeypatch.setenv("PROGEXP_THREADS", "1")
    ref = simulate_brownian(g, 1, 10_000, seed=9)
    monkeypatch.setenv("PROGEXP_THREADS", threads)
    assert np.array_equal(simulate_brownian(g, 1, 10_000, seed=9).values, ref.values)


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("PROGEXP_THREADS", "many")
    with pytest.raises(ValueError):
        simulate_brownian(make_grid(1.0, 4), 1, 10, seed=0)


def test_path_offset_addresses_rows():
    g = make_grid(1.0, 7)
    full = simulate_brownian(g, 2, 5000, seed=4)
    part = simulate_brownian(g, 2, 100, seed=4, stream_offset=4090)
    assert np.array_equal(part.values, full.values[4090:4190])


def test_keyed_streams_differ_and_uniforms_in_range():
    u = keyed_uniforms(3, 1, 1000, 5)
    assert np.all((u > 0) & (u < 1))
    assert not np.array_equal(keyed_normals(3, 0, 10, 4), keyed_normals(3, 1, 10, 4))


def test_ito_identity_and_zero_integrands():
    g = make_grid(1.0, 50)
    W = simulate_brownian(g, 1, 200, seed=3).component(0)
    one = GridProcess.deterministic(g, 200, lambda t: np.ones_like(t))
    np.testing.assert_allclose(ito_integrate(one, W).values, W.values, atol=1e-14)
    assert np.all(ito_integrate(GridProcess.zeros(g, 200), W).values == 0.0)


def test_ito_formula_oracle():
    T, K = 1.0, 1000
    g = make_grid(T, K)
    W = simulate_brownian(g, 1, 2000, seed=13).component(0)
    I = ito_integrate(W, W).values[:, -1]
    target = (W.values[:, -1] ** 2 - T) / 2
    rms = np.sqrt(np.mean((I - target) ** 2))
    # exact discrete error is (sum dW^2 - T)/2 with RMS sqrt(T dt / 2)
    assert rms < 2 * np.sqrt(g.dt * T)


def test_martingale_transform_has_zero_mean():
    g = make_grid(1.0, 20)
    W = simulate_brownian(g, 1, 50_000, seed=21).component(0)
    h = GridProcess(g, np.tanh(W.values))
    I = ito_integrate(h, W).values
    se = I.std(axis=0, ddof=1) / np.sqrt(I.shape[0])
    assert np.all(np.abs(I.mean(axis=0)) <= 4 * np.maximum(se, 1e-300))


def test_quadratic_variation():
    T, K = 1.0, 400
    g = make_grid(T, K)
    W = simulate_brownian(g, 1, 2000, seed=17).component(0)
    qv = covariation(W, W).values[:, -1]
    assert np.sqrt(np.mean((qv - T) ** 2)) < 3 * np.sqrt(g.dt) * T


def test_covariation_with_finite_variation_vanishes_at_rate_dt():
    out = []
    for K in (50, 200, 800):
        g = make_grid(1.0, K)
        Y = GridProcess.deterministic(g, 1, np.sin)
        out.append(abs(covariation(Y, Y).values[0, -1]))
    assert out[0] > out[1] > out[2]
    assert out[2] < 2 * (1.0 / 800)


def test_independent_components_have_zero_covariation():
    T, K = 1.0, 100
    g = make_grid(T, K)
    ens = simulate_brownian(g, 2, 20_000, seed=19)
    c = covariation(ens.component(0), ens.component(1)).values[:, -1]
    assert abs(c.mean()) < 4 * np.sqrt(T * g.dt)
    assert abs(c.mean()) < 4 * c.std() / np.sqrt(c.size)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_covariation_symmetric_and_bilinear(seed, a, b):
    g = make_grid(1.0, 12)
    ens = simulate_brownian(g, 3, 8, seed=seed)
    X, Y, V = (ens.component(c) for c in range(3))
    assert np.array_equal(covariation(X, Y).values, covariation(Y, X).values)
    mix = GridProcess(g, a * X.values + b * V.values)
    lhs = covariation(mix, Y).values
    rhs = a * covariation(X, Y).values + b * covariation(V, Y).values
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-13)


def test_grid_process_validation():
    g = make_grid(1.0, 4)
    with pytest.raises(ValueError):
        GridProcess(g, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        GridProcess(g, np.full((2, 5), np.nan))
    p = GridProcess(g, np.zeros((2, 5)))
    with pytest.raises(ValueError):
        p.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        p + GridProcess(make_grid(1.0, 8), np.zeros((2, 9)))
