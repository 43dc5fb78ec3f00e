"""Decomposition of a continuous F-martingale in the progressive expansion with one time.

Before the random time the drift is the Jeulin-Yor compensator
``int (d<M, mu> + dJ) / Z_{s-}``; from the time on it is the drift of ``M``
in the initial expansion, here Jacod's ``int k_s(tau) d<M, M>_s`` or a
caller-supplied drift ``g``.  Only continuous ``M`` are handled, so ``J = 0``.

Grid conventions: the random time is snapped to the first node ``>= tau``
(index ``j``).  Steps ``i < j`` carry the before-tau drift and steps
``i >= j`` the after-tau drift, so the drift after tau vanishes up to and
including node ``j`` and the drift before tau is frozen from node ``j`` on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid import GridProcess, PathEnsemble, TimeGrid, ito_integrate
from .models import RandomTimeModel, TimeSample, z_martingale_part

Z_FLOOR = 1e-10
Z_TRUNCATE = 1e-6


@dataclass(frozen=True)
class DrivenMartingale:
    """``M = int m(s) dW^c`` with deterministic ``m`` (``m = 1`` gives ``M = W^c``)."""

    m: Optional[Callable[[np.ndarray], np.ndarray]] = None
    component: int = 0
    label: str = "W"

    def integrand(self, grid: TimeGrid) -> np.ndarray:
        if self.m is None:
            return np.ones(grid.K + 1)
        vals = np.broadcast_to(np.asarray(self.m(grid.nodes), dtype=np.float64), (grid.K + 1,))
        if not np.all(np.isfinite(vals)):
            raise ValueError("martingale integrand m must be finite on the grid")
        return vals.copy()

    def build(self, ensemble: PathEnsemble) -> GridProcess:
        W = ensemble.component(self.component)
        if self.m is None:
            return W
        h = GridProcess.deterministic(ensemble.grid, ensemble.n_paths, self.m)
        return ito_integrate(h, W)


def linear_martingale(a: float = 1.0, b: float = 0.0, component: int = 0) -> DrivenMartingale:
    """``M = int (a + b s) dW^c``."""
    if a == 1.0 and b == 0.0:
        return DrivenMartingale(None, component, "W")
    return DrivenMartingale(lambda s: a + b * s, component, f"int({a}+{b}s)dW")


@dataclass(frozen=True)
class JYIngredients:
    """Azema supermartingale, its martingale part and the bracket with ``M``.

    ``bracket_steps`` holds the per-step increments of ``<M, mu>`` so that
    drifts are assembled from raw increments rather than differenced sums.
    """

    Z: GridProcess
    mu: GridProcess
    J: GridProcess
    bracket: GridProcess
    bracket_steps: np.ndarray


@dataclass(frozen=True)
class Decomposition:
    original: GridProcess
    martingale_part: GridProcess
    drift_before: GridProcess
    drift_after: GridProcess
    tau: np.ndarray
    truncated: np.ndarray
    mark: Optional[np.ndarray] = None

    def additivity_residual(self) -> float:
        total = self.martingale_part.values + self.drift_before.values + self.drift_after.values
        return float(np.max(np.abs(total - self.original.values)))

    @property
    def truncation_fraction(self) -> float:
        return float(np.mean(self.truncated))

    @property
    def drift(self) -> GridProcess:
        return self.drift_before + self.drift_after


def _cumulate(steps: np.ndarray, grid: TimeGrid) -> GridProcess:
    out = np.zeros((steps.shape[0], grid.K + 1))
    np.cumsum(steps, axis=1, out=out[:, 1:])
    return GridProcess(grid, out)


def _driver(ensemble: PathEnsemble, model: RandomTimeModel) -> np.ndarray:
    if model.dim:
        return ensemble.values[:, :, model.component]
    return np.zeros((ensemble.n_paths, ensemble.grid.K + 1))


def jy_ingredients(
    M: GridProcess,
    model: RandomTimeModel,
    ensemble: PathEnsemble,
    martingale: Optional[DrivenMartingale] = None,
    bracket: str = "covariation",
) -> JYIngredients:
    """Closed-form ``Z`` and ``mu`` along the paths and the bracket ``<M, mu>``.

    ``bracket="covariation"`` uses realized covariation of ``M`` against the
    closed-form ``mu`` increments; ``"analytic"`` uses ``m_s dZ/dx ds``.
    """
    grid = ensemble.grid
    x = _driver(ensemble, model)
    t = grid.nodes
    Z = GridProcess(grid, model.azema_z(t, x))
    mu_steps = model.azema_z(t[1:], x[:, 1:]) - model.z_one_step_mean(t[:-1], t[1:], x[:, :-1])
    mu = _cumulate(mu_steps, grid)
    same_driver = martingale is None or martingale.component == model.component
    if bracket == "covariation":
        steps = M.increments() * mu_steps
    elif bracket == "analytic":
        if martingale is None:
            raise ValueError("analytic bracket needs the martingale integrand")
        if same_driver and model.dim:
            m = martingale.integrand(grid)[:-1]
            steps = m * model.z_sensitivity(t[:-1], x[:, :-1]) * grid.dt
        else:
            steps = np.zeros((ensemble.n_paths, grid.K))
    else:
        raise ValueError(f"unknown bracket method {bracket!r}")
    zero = GridProcess.zeros(grid, ensemble.n_paths)
    return JYIngredients(Z, mu, zero, _cumulate(steps, grid), steps)


def jy_steps(bracket_steps, j_steps, Z_left, tau_idx, start_idx=None):
    """Per-step Jeulin-Yor increments on the window ``start <= i < tau_idx``.

    Returns the increments and a per-path flag marking paths whose ``Z``
    dropped below the truncation level inside the window; their increments
    are zeroed from that step on.
    """
    K = bracket_steps.shape[1]
    i = np.arange(K)
    window = i[None, :] < tau_idx[:, None]
    if start_idx is not None:
        window &= i[None, :] >= start_idx[:, None]
    low = window & (Z_left < Z_TRUNCATE)
    dead = np.cumsum(low, axis=1) > 0
    keep = window & ~dead
    steps = np.where(keep, (bracket_steps + j_steps) / np.maximum(Z_left, Z_FLOOR), 0.0)
    return steps, low.any(axis=1)


def jeulin_yor_drift(
    M: GridProcess, ingredients: JYIngredients, tau, return_truncation: bool = False
):
    """``int_0^{t ^ tau} (d<M, mu>_s + dJ_s) / Z_{s-}`` on the grid."""
    grid = M.grid
    tau_idx = grid.snap(tau)
    steps, truncated = jy_steps(
        ingredients.bracket_steps,
        ingredients.J.increments(),
        ingredients.Z.values[:, :-1],
        tau_idx,
    )
    drift = _cumulate(steps, grid)
    return (drift, truncated) if return_truncation else drift


def after_steps(slope, m_left, dt, tau_idx):
    """``k_{t_i} m_{t_i} dt`` on steps ``i >= tau_idx``."""
    K = slope.shape[1]
    after = np.arange(K)[None, :] >= tau_idx[:, None]
    return np.where(after, slope * m_left * dt, 0.0)


def jacod_after_drift(
    martingale: DrivenMartingale,
    ensemble: PathEnsemble,
    model: RandomTimeModel,
    tau,
    mark=None,
) -> GridProcess:
    """``int_{t ^ tau}^t k_s(tau) d<M, M>_s`` on the grid.

    ``model.jacod_slope`` is the slope against ``W``; relative to
    ``M = int m dW`` it is ``k / m``, so the drift is ``sum k m dt``.
    """
    grid = ensemble.grid
    model.check_horizon(grid.nodes[-1])
    tau = np.asarray(tau, dtype=np.float64)
    tau_idx = grid.snap(tau)
    if martingale.component != model.component or not model.dim:
        return GridProcess.zeros(grid, ensemble.n_paths)
    x = _driver(ensemble, model)[:, :-1]
    t = grid.nodes[:-1]
    m = martingale.integrand(grid)[:-1]
    if mark is None:
        k = model.jacod_slope(t, x, tau[:, None])
    else:
        k = model.jacod_slope(t, x, tau[:, None], np.asarray(mark)[:, None])
    return _cumulate(after_steps(k, m, grid.dt, tau_idx), grid)


def decompose_single(
    martingale: DrivenMartingale,
    ensemble: PathEnsemble,
    model: RandomTimeModel,
    sample: TimeSample,
    mode: str = "plain",
    g: Optional[Callable] = None,
    bracket: str = "covariation",
) -> Decomposition:
    """Full decomposition ``M = martingale_part + drift_before + drift_after``.

    ``mode="marked"`` evaluates the after-tau slope at ``(tau, X)``;
    ``mode="plugged"`` uses ``g(t, x, tau)`` as the after-tau drift of ``W``
    in the initial expansion (so ``M`` gets ``g m dt``).
    """
    model.check_driver(ensemble)
    if mode not in ("plain", "marked", "plugged"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "marked" and (not model.has_marks or sample.mark is None):
        raise ValueError(f"marked mode needs a marked model; {model.kind} carries no mark")
    if mode == "plugged" and g is None:
        raise ValueError("plugged mode needs a drift function g")

    grid = ensemble.grid
    M = martingale.build(ensemble)
    tau = np.asarray(sample.tau, dtype=np.float64)
    ing = jy_ingredients(M, model, ensemble, martingale, bracket)
    before, truncated = jeulin_yor_drift(M, ing, tau, return_truncation=True)

    if mode == "plugged":
        tau_idx = grid.snap(tau)
        if martingale.component == model.component and model.dim:
            x = _driver(ensemble, model)[:, :-1]
            slope = np.broadcast_to(g(grid.nodes[:-1], x, tau[:, None]), x.shape)
        else:
            slope = np.zeros((ensemble.n_paths, grid.K))
        m = martingale.integrand(grid)[:-1]
        after = _cumulate(after_steps(slope, m, grid.dt, tau_idx), grid)
    else:
        mark = sample.mark if mode == "marked" else None
        after = jacod_after_drift(martingale, ensemble, model, tau, mark)

    mart = GridProcess(grid, M.values - (before.values + after.values))
    return Decomposition(M, mart, before, after, tau, truncated, sample.mark)
