"""Progressive expansion with several unordered random times.

For an index set ``I`` let ``sigma_I`` be the largest time in ``I`` and
``rho_I`` the smallest time outside it.  On the window ``[sigma_I, rho_I)``
the expanded filtration agrees with the initial expansion by ``tau_I``
further expanded progressively by ``rho_I``, so the drift there is the
initial-expansion drift ``A^I`` plus a Jeulin-Yor term built from
``Z^I = P(rho_I > t | F_t v sigma(tau_I))``.  Summing the windowed pieces over
all ``2^n`` index sets telescopes back to the whole path.

Index sets are tuples of 0-based component indices.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from .grid import GridProcess, PathEnsemble, TimeGrid
from .models import (
    GL_HALF_WIDTH,
    GL_ORDER,
    IndependentDriverFamily,
    TimeSample,
    gauss_legendre,
)
from .single import Decomposition, DrivenMartingale, _cumulate, after_steps, jy_steps

MAX_TIMES = 10


def all_subsets(n: int) -> Iterator[Tuple[int, ...]]:
    """Every index set of ``{0..n-1}``, by size then lexicographically."""
    for size in range(n + 1):
        yield from combinations(range(n), size)


def subset_quantities(taus, I) -> tuple:
    """``(sigma_I, rho_I, active)`` with ``sigma_{} = 0`` and ``rho_full = inf``.

    ``taus`` has a trailing axis of length ``n``; the result broadcasts over
    the leading axes.
    """
    taus = np.asarray(taus, dtype=np.float64)
    n = taus.shape[-1]
    inside = np.zeros(n, dtype=bool)
    inside[list(I)] = True
    sigma = np.max(taus[..., inside], axis=-1) if inside.any() else np.zeros(taus.shape[:-1])
    rho = np.min(taus[..., ~inside], axis=-1) if (~inside).any() else np.full(taus.shape[:-1], np.inf)
    return sigma, rho, sigma <= rho


def _snapped_window(grid: TimeGrid, taus: np.ndarray, I):
    """Snapped node indices of ``sigma_I`` and ``rho_I`` (``K+1`` stands for never)."""
    idx = grid.snap(taus)
    n = taus.shape[-1]
    inside = np.zeros(n, dtype=bool)
    inside[list(I)] = True
    lo = idx[:, inside].max(axis=1) if inside.any() else np.zeros(idx.shape[0], dtype=np.int64)
    hi = idx[:, ~inside].min(axis=1) if (~inside).any() else np.full(idx.shape[0], grid.K + 1)
    return lo, hi


def windowed(L: GridProcess, taus, I) -> GridProcess:
    """``N_t = 1{sigma_I <= rho_I} (L_{t ^ rho_I} - L_{t ^ sigma_I})`` on the grid."""
    grid = L.grid
    taus = np.asarray(taus, dtype=np.float64)
    _, _, active = subset_quantities(taus, I)
    lo, hi = _snapped_window(grid, taus, I)
    j = np.arange(grid.K + 1)[None, :]
    rows = np.arange(L.n_paths)[:, None]
    up = L.values[rows, np.minimum(j, np.minimum(hi, grid.K)[:, None])]
    down = L.values[rows, np.minimum(j, lo[:, None])]
    return GridProcess(grid, np.where(active[:, None], up - down, 0.0))


def stop_at(N: GridProcess, idx) -> GridProcess:
    """``N_{t ^ T}`` for per-path node indices ``T``."""
    idx = np.minimum(np.asarray(idx, dtype=np.int64), N.grid.K)
    j = np.arange(N.grid.K + 1)[None, :]
    rows = np.arange(N.n_paths)[:, None]
    return GridProcess(N.grid, N.values[rows, np.minimum(j, idx[:, None])])


def glue_residual(N: GridProcess, taus, I, T_idx, c_idx) -> float:
    """``max |N_{t^T} - N_{t^T'}|`` with ``T' = (sigma_I v T) ^ (rho_I v c)`` on node indices."""
    lo, hi = _snapped_window(N.grid, np.asarray(taus, dtype=np.float64), I)
    T_idx = np.broadcast_to(np.asarray(T_idx, dtype=np.int64), lo.shape)
    T_prime = np.minimum(np.maximum(lo, T_idx), np.maximum(hi, c_idx))
    return float(np.max(np.abs(stop_at(N, T_idx).values - stop_at(N, T_prime).values)))


def telescope_residual(M: GridProcess, taus) -> float:
    """``max |sum_I 1{sigma_I <= rho_I}(M_{t^rho_I} - M_{t^sigma_I}) - (M_t - M_0)|``."""
    taus = np.asarray(taus, dtype=np.float64)
    if taus.ndim == 1:
        taus = np.broadcast_to(taus, (M.n_paths, taus.size))
    total = np.zeros_like(M.values)
    for I in all_subsets(taus.shape[1]):
        total += windowed(M, taus, I).values
    return float(np.max(np.abs(total - (M.values - M.values[:, :1]))))


def window_cover_counts(grid: TimeGrid, taus) -> np.ndarray:
    """Number of active windows ``[sigma_I, rho_I)`` covering each grid step."""
    taus = np.asarray(taus, dtype=np.float64)
    counts = np.zeros((taus.shape[0], grid.K), dtype=np.int64)
    i = np.arange(grid.K)[None, :]
    for I in all_subsets(taus.shape[1]):
        _, _, active = subset_quantities(taus, I)
        lo, hi = _snapped_window(grid, taus, I)
        counts += (active[:, None] & (i >= lo[:, None]) & (i < hi[:, None]))
    return counts


@dataclass(frozen=True)
class MarkedFamily:
    """Times with marks; ``Y_I`` is the mark of the time achieving ``rho_I``.

    ``rho_I`` minimizes over the complement of ``I``, so the index achieving
    it lies outside ``I``.
    """

    taus: np.ndarray
    marks: np.ndarray

    def y(self, I) -> np.ndarray:
        taus = np.asarray(self.taus, dtype=np.float64)
        out_idx = [j for j in range(taus.shape[1]) if j not in set(I)]
        if not out_idx:
            return np.full(taus.shape[0], np.nan)
        pos = np.argmin(taus[:, out_idx], axis=1)
        star = np.asarray(out_idx)[pos]
        return np.asarray(self.marks)[np.arange(taus.shape[0]), star]


def n_process(grid: TimeGrid, taus, marks) -> GridProcess:
    """Marked counting process ``N_t = sum_i X_i 1{tau_i <= t}``."""
    taus = np.asarray(taus, dtype=np.float64)
    marks = np.asarray(marks, dtype=np.float64)
    if taus.shape != marks.shape:
        raise ValueError("times and marks must have the same shape")
    hit = taus[:, :, None] <= grid.nodes[None, None, :]
    return GridProcess(grid, np.sum(marks[:, :, None] * hit, axis=1))


def marginal_density(family: IndependentDriverFamily, t, x, I, u_I, method: str = "auto",
                     convention: str = "lebesgue"):
    """Conditional density of ``tau_I``.

    ``method="auto"`` uses the family's factorization; ``"quadrature"``
    integrates the joint Lebesgue density over the absent coordinates with a
    tensor Gauss-Legendre rule in log coordinates (at most two of them).
    """
    I = tuple(sorted(I))
    if method == "auto" and getattr(family, "factorized", False):
        return family.marginal_density(t, x, I, u_I, convention)
    if method not in ("auto", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if convention != "lebesgue":
        raise ValueError("quadrature marginals are computed against Lebesgue measure")
    absent = [j for j in range(family.n) if j not in I]
    if len(absent) > 2:
        raise ValueError(f"quadrature over {len(absent)} coordinates is not supported (max 2)")
    t = float(t)
    x = np.asarray(x, dtype=np.float64)
    u_I = np.asarray(u_I, dtype=np.float64)
    if not absent:
        return family.joint_density(t, x, u_I, convention)
    axes = []
    for j in absent:
        c, s = family.log_window(j, t, x)
        y, w = gauss_legendre(c - GL_HALF_WIDTH * s, c + GL_HALF_WIDTH * s, GL_ORDER)
        axes.append((y, w))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    weight = np.ones_like(grids[0])
    for d, (_, w) in enumerate(axes):
        shape = [1] * len(axes)
        shape[d] = -1
        weight = weight * w.reshape(shape)
    u = np.empty(grids[0].shape + (family.n,))
    for pos, i in enumerate(I):
        u[..., i] = u_I[pos]
    jac = np.ones_like(grids[0])
    for d, j in enumerate(absent):
        u[..., j] = np.exp(grids[d])
        jac = jac * u[..., j]
    dens = family.joint_density(t, x, u, "lebesgue")
    return float(np.sum(dens * jac * weight))


def z_subset(family: IndependentDriverFamily, t, x, I, tau_I=None):
    return family.z_subset(t, x, I, tau_I)


def _subset_pieces(martingale, ensemble, family, taus, I, M_steps, bracket):
    """Per-step Jacod and Jeulin-Yor increments for index set ``I`` on all steps.

    Returns ``(jacod_steps, bracket_steps, Z_left)``; ``Z_left`` is ``None``
    for the full index set (``rho = inf``, ``Z = 1``).
    """
    grid = ensemble.grid
    t = grid.nodes
    x = ensemble.values
    c = martingale.component
    m = martingale.integrand(grid)[:-1]
    n = family.n
    if c in I:
        tau_I = {i: taus[:, i][:, None] for i in I}
        k = family.jacod_slope_subset(t[:-1], x[:, :-1, :], I, tau_I, c)
        jac = k * m * grid.dt
    else:
        jac = None
    if len(I) == n:
        return jac, None, None
    Z_left = family.z_subset(t[:-1], x[:, :-1, :], I)
    if bracket == "covariation":
        z_next = family.z_subset(t[1:], x[:, 1:, :], I)
        mean_next = family.z_subset_one_step_mean(t[:-1], t[1:], x[:, :-1, :], I)
        br = M_steps * (z_next - mean_next)
    elif bracket == "analytic":
        br = m * family.z_subset_sensitivity(t[:-1], x[:, :-1, :], I, c) * grid.dt
    else:
        raise ValueError(f"unknown bracket method {bracket!r}")
    return jac, br, Z_left


def multi_drift(
    martingale: DrivenMartingale,
    ensemble: PathEnsemble,
    family: IndependentDriverFamily,
    sample: TimeSample,
    bracket: str = "covariation",
) -> Decomposition:
    """Decomposition of ``M`` in the progressive expansion with all times.

    Every index set is visited; on its window (when active) a step gets the
    Jacod slope of ``p^I`` at ``tau_I`` times ``m dt`` plus
    ``d<M, mu^I> / Z^I_{s-}``.  ``drift_before`` collects the Jeulin-Yor
    terms and ``drift_after`` the initial-expansion terms.
    """
    family.check_driver(ensemble)
    taus = np.asarray(sample.tau, dtype=np.float64)
    if taus.ndim != 2 or taus.shape[1] != family.n:
        raise ValueError(f"expected times of shape (n_paths, {family.n})")
    if family.n > MAX_TIMES:
        raise ValueError(f"at most {MAX_TIMES} times are supported")
    grid = ensemble.grid
    M = martingale.build(ensemble)
    M_steps = M.increments()
    i = np.arange(grid.K)[None, :]
    jy_total = np.zeros((ensemble.n_paths, grid.K))
    jac_total = np.zeros((ensemble.n_paths, grid.K))
    truncated = np.zeros(ensemble.n_paths, dtype=bool)

    for I in all_subsets(family.n):
        _, _, active = subset_quantities(taus, I)
        lo, hi = _snapped_window(grid, taus, I)
        live = active & (lo < np.minimum(hi, grid.K))
        if not live.any():
            continue
        jac, br, Z_left = _subset_pieces(martingale, ensemble, family, taus, I, M_steps, bracket)
        if jac is not None:
            window = live[:, None] & (i >= lo[:, None]) & (i < hi[:, None])
            jac_total += np.where(window, jac, 0.0)
        if br is not None:
            zero = np.zeros_like(br)
            steps, trunc = jy_steps(br, zero, Z_left, np.where(live, hi, 0), lo)
            jy_total += steps
            truncated |= trunc

    before = _cumulate(jy_total, grid)
    after = _cumulate(jac_total, grid)
    mart = GridProcess(grid, M.values - (before.values + after.values))
    return Decomposition(M, mart, before, after, taus, truncated, sample.mark)


def subset_local_martingale(
    martingale: DrivenMartingale,
    ensemble: PathEnsemble,
    family: IndependentDriverFamily,
    sample: TimeSample,
    I,
    bracket: str = "covariation",
) -> GridProcess:
    """``M^I_t = M_{t^rho_I} - A^I_{t^rho_I} - int_0^{t^rho_I} d<M, mu^I> / Z^I_{s-}``.

    The local martingale of the expansion by ``tau_I`` and then ``rho_I``;
    windowing it over ``[sigma_I, rho_I)`` and summing over ``I`` gives the
    martingale part of :func:`multi_drift`.
    """
    I = tuple(sorted(I))
    grid = ensemble.grid
    taus = np.asarray(sample.tau, dtype=np.float64)
    M = martingale.build(ensemble)
    jac, br, Z_left = _subset_pieces(martingale, ensemble, family, taus, I,
                                     M.increments(), bracket)
    _, hi = _snapped_window(grid, taus, I)
    stopped = np.arange(grid.K)[None, :] < hi[:, None]
    steps = np.where(stopped, M.increments(), 0.0)
    if jac is not None:
        steps = steps - np.where(stopped, jac, 0.0)
    if br is not None:
        jy, _ = jy_steps(br, np.zeros_like(br), Z_left, hi)
        steps = steps - jy
    return _cumulate(steps, grid)
