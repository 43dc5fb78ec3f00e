"""Statistical martingale tests, conditional-increment checks and shrinkage checks.

A process ``N`` is tested against a filtration through features measurable at
the earlier time ``s`` of each pair: under the null ``E[f_s (N_t - N_s)] = 0``
for every feature, and each sample mean is turned into a z-statistic.
Measurability is guaranteed by construction: feature menus are built only
from quantities known at ``s`` in the tested filtration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .grid import GridProcess, PathEnsemble, TimeGrid
from .models import (
    BridgeLognormal,
    GL_ORDER,
    RandomTimeModel,
    TimeSample,
    bridge_q_integral,
)
from .single import Z_FLOOR, DrivenMartingale

Z_PASS = 4.0
Z_FAIL = 10.0

Pair = Tuple[float, float]


def default_pairs(grid: TimeGrid) -> List[Pair]:
    """Consecutive quarters of the horizon, snapped to the nearest nodes."""
    q = [grid.nodes[int(round(grid.K * f))] for f in (0.0, 0.25, 0.5, 0.75, 1.0)]
    return [(float(a), float(b)) for a, b in zip(q[:-1], q[1:])]


def _verdict(z: float, z_pass: float, z_fail: float) -> str:
    a = abs(z)
    if a < z_pass:
        return "pass"
    if a > z_fail:
        return "fail"
    return "inconclusive"


@dataclass
class TestReport:
    """z-statistics per (pair, feature) with pass / fail / inconclusive verdicts."""

    __test__ = False  # not a pytest class

    records: List[dict] = field(default_factory=list)
    n_paths: int = 0
    features: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    z_pass: float = Z_PASS
    z_fail: float = Z_FAIL

    @property
    def max_abs_z(self) -> float:
        return max((abs(r["z"]) for r in self.records), default=0.0)

    def max_abs_z_at(self, pair: Pair) -> float:
        hits = [abs(r["z"]) for r in self.records if np.allclose(r["pair"], pair)]
        return max(hits, default=0.0)

    @property
    def verdict(self) -> str:
        return _verdict(self.max_abs_z, self.z_pass, self.z_fail)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_records(self, scenario_id: str, op: str) -> List[dict]:
        return [
            {
                "scenario": scenario_id,
                "op": op,
                "pair": [float(r["pair"][0]), float(r["pair"][1])],
                "feature": r["feature"],
                "z": float(r["z"]),
                "se": float(r["se"]),
                "verdict": r["verdict"],
            }
            for r in self.records
        ]


def martingale_test(
    N: GridProcess,
    features: Dict[str, GridProcess],
    pairs: Optional[Sequence[Pair]] = None,
    z_pass: float = Z_PASS,
    z_fail: float = Z_FAIL,
    mask: Optional[np.ndarray] = None,
) -> TestReport:
    """``z = mean(f_s (N_t - N_s)) / SE`` for every pair and feature."""
    grid = N.grid
    pairs = default_pairs(grid) if pairs is None else list(pairs)
    vals = N.values if mask is None else N.values[mask]
    report = TestReport(n_paths=vals.shape[0], features=list(features), z_pass=z_pass,
                        z_fail=z_fail)
    for s, t in pairs:
        i, j = grid.index_of(s), grid.index_of(t)
        if j <= i:
            raise ValueError(f"pair ({s}, {t}) is not increasing")
        dN = vals[:, j] - vals[:, i]
        for name, F in features.items():
            f = F.values[:, i] if mask is None else F.values[mask, i]
            y = f * dN
            se = np.std(y, ddof=1) / np.sqrt(y.size)
            if not np.any(f) or not se > 0:
                report.notes.append(f"feature {name!r} degenerate at s={s}; skipped")
                continue
            z = float(np.mean(y) / se)
            report.records.append(
                {"pair": (s, t), "feature": name, "z": z, "se": float(se),
                 "mean": float(np.mean(y)), "verdict": _verdict(z, z_pass, z_fail)}
            )
    return report


def increment_regression_test(
    N: GridProcess,
    regressors: Dict[str, GridProcess],
    pairs: Optional[Sequence[Pair]] = None,
    z_pass: float = Z_PASS,
    z_fail: float = Z_FAIL,
) -> TestReport:
    """Regress ``N_t - N_s`` on an intercept and the regressors at ``s``.

    Coefficient z-statistics use heteroskedasticity-robust (HC0) standard
    errors; regressors constant at ``s`` are dropped with a note.
    """
    grid = N.grid
    pairs = default_pairs(grid) if pairs is None else list(pairs)
    report = TestReport(n_paths=N.n_paths, features=["1", *regressors], z_pass=z_pass,
                        z_fail=z_fail)
    for s, t in pairs:
        i, j = grid.index_of(s), grid.index_of(t)
        y = N.values[:, j] - N.values[:, i]
        names, cols = ["1"], [np.ones(N.n_paths)]
        for name, R in regressors.items():
            r = R.values[:, i]
            if np.ptp(r) == 0:
                report.notes.append(f"regressor {name!r} constant at s={s}; dropped")
                continue
            names.append(name)
            cols.append(r)
        X = np.column_stack(cols)
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        bread = np.linalg.inv(X.T @ X)
        meat = (X * resid[:, None] ** 2).T @ X
        se = np.sqrt(np.diag(bread @ meat @ bread))
        for name, b, e in zip(names, beta, se):
            z = float(b / e) if e > 0 else 0.0
            report.records.append(
                {"pair": (s, t), "feature": name, "z": z, "se": float(e),
                 "mean": float(b), "verdict": _verdict(z, z_pass, z_fail)}
            )
    return report


def _const(grid, n, value=1.0) -> GridProcess:
    return GridProcess(grid, np.full((n, grid.K + 1), value))


def f_features(ensemble: PathEnsemble, components: Sequence[int] = (0,)) -> Dict[str, GridProcess]:
    """Features known in the driver filtration: ``1`` and the driver values."""
    out = {"1": _const(ensemble.grid, ensemble.n_paths)}
    for c in components:
        out[f"W{c}_s"] = ensemble.component(c)
    return out


def time_features(grid: TimeGrid, tau, mark=None, suffix: str = "") -> Dict[str, GridProcess]:
    """``1{tau <= s}``, ``tau ^ s`` and ``X 1{tau <= s}``: all known at ``s`` once tau is a stopping time."""
    tau = np.asarray(tau, dtype=np.float64)[:, None]
    t = grid.nodes[None, :]
    hit = (tau <= t).astype(np.float64)
    out = {
        f"1{{tau{suffix}<=s}}": GridProcess(grid, hit),
        f"tau{suffix}^s": GridProcess(grid, np.minimum(tau, t)),
    }
    if mark is not None:
        out[f"X{suffix}*1{{tau{suffix}<=s}}"] = GridProcess(grid, np.asarray(mark)[:, None] * hit)
    return out


def g_features(
    ensemble: PathEnsemble,
    sample: TimeSample,
    model: Optional[RandomTimeModel] = None,
    components: Sequence[int] = (0,),
) -> Dict[str, GridProcess]:
    """Feature menu for the progressive expansion with one (possibly marked) time."""
    out = f_features(ensemble, components)
    out.update(time_features(ensemble.grid, sample.tau, sample.mark))
    if model is not None:
        x = ensemble.values[:, :, model.component] if model.dim else \
            np.zeros((ensemble.n_paths, ensemble.grid.K + 1))
        out["Z_s"] = GridProcess(ensemble.grid, model.azema_z(ensemble.grid.nodes, x))
    return out


def family_features(ensemble: PathEnsemble, sample: TimeSample) -> Dict[str, GridProcess]:
    """Feature menu for the progressive expansion with a vector of times."""
    taus = np.asarray(sample.tau)
    out = f_features(ensemble, range(taus.shape[1]))
    for i in range(taus.shape[1]):
        mark = None if sample.mark is None else sample.mark[:, i]
        out.update(time_features(ensemble.grid, taus[:, i], mark, suffix=str(i)))
    return out


def density_martingale_test(
    model: RandomTimeModel,
    ensemble: PathEnsemble,
    us: Sequence[float],
    pairs: Optional[Sequence[Pair]] = None,
) -> TestReport:
    """For each fixed ``u``, regress ``p_t(u) - p_s(u)`` on ``1`` and ``W_s``."""
    grid = ensemble.grid
    x = ensemble.values[:, :, model.component]
    W = ensemble.component(model.component)
    merged = TestReport(n_paths=ensemble.n_paths)
    for u in us:
        p = model.conditional_density(grid.nodes, x, u).p
        rep = increment_regression_test(GridProcess(grid, p), {"W_s": W}, pairs)
        for r in rep.records:
            r["feature"] = f"u={u:.6g}:{r['feature']}"
        merged.records.extend(rep.records)
        merged.notes.extend(f"u={u:.6g}: {n}" for n in rep.notes)
    merged.features = sorted({r["feature"] for r in merged.records})
    return merged


class ConstantRate:
    """``a_s = c``."""

    def __init__(self, c: float):
        self.c = float(c)

    def raw(self, ensemble, sample):
        return np.full((ensemble.n_paths, ensemble.grid.K + 1), self.c)

    def cumulative_projection(self, ensemble, sample):
        return _left_sum(self.raw(ensemble, sample), ensemble.grid)

    def pointwise_projection(self, ensemble, sample):
        return self.raw(ensemble, sample)


class GAdapted:
    """An integrand already adapted to the expanded filtration: projections are the identity."""

    def __init__(self, process: GridProcess):
        self.process = process

    def raw(self, ensemble, sample):
        return self.process.values

    def cumulative_projection(self, ensemble, sample):
        return _left_sum(self.process.values, ensemble.grid)

    def pointwise_projection(self, ensemble, sample):
        return self.process.values


class BridgeSlope:
    """Jacod slope ``a_s = k_s(tau)`` restricted to ``{tau > s}`` or ``{tau <= s}``.

    On ``{tau <= s}`` the slope is known in the expanded filtration.  Before
    tau only ``{tau > s}`` is known, and the projection uses the truncated
    Gaussian mean of ``log tau``.
    """

    def __init__(self, model: BridgeLognormal, before: bool = True):
        if not isinstance(model, BridgeLognormal):
            raise TypeError("bridge slope projections need a bridge model")
        self.model = model
        self.before = before

    def _parts(self, ensemble, sample):
        grid = ensemble.grid
        t = grid.nodes[None, :]
        x = ensemble.values[:, :, self.model.component]
        tau = np.asarray(sample.tau, dtype=np.float64)[:, None]
        k = self.model.jacod_slope(t, x, tau)
        alive = tau > t
        return grid, t, x, tau, k, alive

    def raw(self, ensemble, sample):
        _, _, _, _, k, alive = self._parts(ensemble, sample)
        return np.where(alive == self.before, k, 0.0)

    def pointwise_projection(self, ensemble, sample):
        grid, t, x, tau, k, alive = self._parts(ensemble, sample)
        if not self.before:
            return np.where(alive, 0.0, k)
        mean_log = self.model.survival_log_mean(t, x)
        return np.where(alive, (mean_log - x) / (self.model.T0 - t), 0.0)

    def cumulative_projection(self, ensemble, sample):
        grid, t, x, tau, k, alive = self._parts(ensemble, sample)
        known = _left_sum(self.raw(ensemble, sample), grid)
        if not self.before:
            return known
        # on {tau > t_j}: sum_{i<j} (E[log tau | G_{t_j}] - W_{t_i}) / (T0 - t_i) dt
        w = grid.dt / (self.model.T0 - grid.nodes[:-1])
        s1 = np.concatenate([[0.0], np.cumsum(w)])
        s2 = np.zeros_like(x)
        np.cumsum(x[:, :-1] * w, axis=1, out=s2[:, 1:])
        guess = self.model.survival_log_mean(t, x) * s1 - s2
        return np.where(alive, guess, known)


def _left_sum(a: np.ndarray, grid: TimeGrid) -> np.ndarray:
    out = np.zeros((a.shape[0], grid.K + 1))
    np.cumsum(a[:, :-1] * grid.dt, axis=1, out=out[:, 1:])
    return out


def conditional_increment_lemma_check(
    integrand,
    ensemble: PathEnsemble,
    sample: TimeSample,
    features: Optional[Dict[str, GridProcess]] = None,
    pairs: Optional[Sequence[Pair]] = None,
):
    """Build ``E(int_0^t a | G_t) - int_0^t E(a_s | G_s) ds`` and test it.

    ``integrand`` is a float (constant rate), a :class:`GridProcess` (taken as
    adapted to the expanded filtration) or an object with closed-form
    ``cumulative_projection`` / ``pointwise_projection`` methods.
    Returns ``(report, M)``.
    """
    if isinstance(integrand, (int, float)):
        integrand = ConstantRate(integrand)
    elif isinstance(integrand, GridProcess):
        integrand = GAdapted(integrand)
    if not hasattr(integrand, "cumulative_projection"):
        raise TypeError("integrand has no closed-form projection")
    grid = ensemble.grid
    first = integrand.cumulative_projection(ensemble, sample)
    second = _left_sum(integrand.pointwise_projection(ensemble, sample), grid)
    M = GridProcess(grid, first - second)
    if features is None:
        features = g_features(ensemble, sample)
    if not np.any(M.values):
        return TestReport(n_paths=ensemble.n_paths, features=list(features),
                          notes=["process vanishes identically"]), M
    return martingale_test(M, features, pairs), M


@dataclass
class ShrinkageReport:
    """Two expressions of the compensator before tau, and their gap."""

    lhs: GridProcess
    rhs: GridProcess
    sup_discrepancy: np.ndarray
    q_integral_max: float
    control: Optional[GridProcess] = None
    control_discrepancy: Optional[np.ndarray] = None

    @property
    def max_discrepancy(self) -> float:
        return float(np.max(self.sup_discrepancy))


def q_integral_lattice(model: BridgeLognormal, grid: TimeGrid, n_states: int = 21,
                       width: float = 4.0) -> float:
    """``max |int_0^inf q_s(u) du|`` over grid nodes and a lattice of driver states."""
    t = grid.nodes[:, None]
    x = np.linspace(-width, width, n_states)[None, :] * np.sqrt(max(grid.T, 1e-12))
    t, x = np.broadcast_arrays(t, x)
    return float(np.max(np.abs(bridge_q_integral(model, t, x))))


def shrinkage_check(
    model: BridgeLognormal,
    ensemble: PathEnsemble,
    sample: TimeSample,
    martingale: DrivenMartingale,
    control: bool = True,
    chunk: int = 256,
) -> ShrinkageReport:
    """Compare the projected initial-expansion drift with the Jeulin-Yor drift.

    ``lhs`` integrates ``(1/Z_{s-}) (int_s^inf q_s(u) du) m_s`` before tau with
    the inner integral by Gauss-Legendre quadrature; ``rhs`` integrates
    ``d<M, Z>_s / Z_{s-}`` from the closed-form driver sensitivity of ``Z``.
    The control replaces ``rhs`` by the raw Jacod drift ``int k_s(tau) d<M, M>``
    stopped at tau, which is not a compensator in the expanded filtration.
    """
    if not isinstance(model, BridgeLognormal):
        raise TypeError("shrinkage check needs a bridge model")
    model.check_driver(ensemble)
    if martingale.component != model.component:
        raise ValueError("martingale and random time must share the driver")
    grid = ensemble.grid
    t = grid.nodes[:-1]
    x = ensemble.values[:, :-1, model.component]
    m = martingale.integrand(grid)[:-1]
    tau = np.asarray(sample.tau, dtype=np.float64)
    before = np.arange(grid.K)[None, :] < grid.snap(tau)[:, None]
    Z = np.maximum(model.azema_z(t, x), Z_FLOOR)

    q_tail = np.empty_like(x)
    for a in range(0, ensemble.n_paths, chunk):
        xs = x[a : a + chunk]
        ts = np.broadcast_to(t, xs.shape)
        q_tail[a : a + chunk] = bridge_q_integral(model, ts, xs, lower=ts, order=GL_ORDER)

    def cum(steps):
        out = np.zeros((ensemble.n_paths, grid.K + 1))
        np.cumsum(np.where(before, steps, 0.0), axis=1, out=out[:, 1:])
        return out

    lhs = cum(q_tail * m * grid.dt / Z)
    rhs = cum(m * model.z_sensitivity(t, x) * grid.dt / Z)
    report = ShrinkageReport(
        GridProcess(grid, lhs),
        GridProcess(grid, rhs),
        np.max(np.abs(lhs - rhs), axis=1),
        q_integral_lattice(model, grid),
    )
    if control:
        k = model.jacod_slope(t, x, tau[:, None])
        ctl = cum(k * m * grid.dt)
        report.control = GridProcess(grid, ctl)
        report.control_discrepancy = np.max(np.abs(lhs - ctl), axis=1)
    return report
