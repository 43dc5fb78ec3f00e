"""Random-time models with closed-form conditional laws.

Each model exposes what the decomposition formulas consume: samples of the
random time, the F_t-conditional density ``p_t(u)`` (against the law of the
time, so ``p_0 = 1``, or against Lebesgue measure), its Brownian volatility
``q_t(u)``, the Jacod slope ``k_t(u)`` with ``q = k p``, and the Azema
supermartingale ``Z_t = P(tau > t | F_t)`` together with its one-step
conditional mean and its sensitivity to the driver.

Single-time models take ``x``, the value of their own driver component.
Families of times take ``x`` with a trailing axis holding all components.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import stats
from scipy.special import log_ndtr, ndtr

from .grid import GridProcess, PathEnsemble, keyed_normals, keyed_uniforms

EXTENSION_STREAM = 1
MARK_STREAM = 2
LAW_STREAM = 3

GL_ORDER = 128
GL_HALF_WIDTH = 8.0

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class HorizonError(ValueError):
    """Raised when a model is queried past its validity horizon."""


@dataclass(frozen=True)
class DensityEval:
    """Conditional density ``p``, its volatility ``q`` and Jacod slope ``k``."""

    p: np.ndarray
    q: np.ndarray
    k: np.ndarray


@dataclass(frozen=True)
class TimeSample:
    """Per-path random time(s) and optional mark(s)."""

    tau: np.ndarray
    mark: Optional[np.ndarray] = None


def _log(t):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(t, dtype=np.float64))


def _norm_logpdf(z):
    return -0.5 * z * z - _LOG_SQRT_2PI


def _norm_pdf(z):
    return np.exp(_norm_logpdf(z))


def gauss_legendre(a, b, order: int = GL_ORDER):
    """Nodes and weights of an ``order``-point rule mapped to ``[a, b]``.

    ``a`` and ``b`` may be arrays; the rule is appended as a trailing axis.
    """
    x, w = leggauss(order)
    a = np.asarray(a, dtype=np.float64)[..., None]
    b = np.asarray(b, dtype=np.float64)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def log_window_quadrature(fn, center, scale, lower=-np.inf, order: int = GL_ORDER):
    """Integrate ``fn(y)`` over ``y > lower`` restricted to ``center +- 8 scale``.

    Windows that lie entirely below ``lower`` integrate to zero.
    """
    center = np.asarray(center, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    hi = center + GL_HALF_WIDTH * scale
    lo = np.maximum(np.asarray(lower, dtype=np.float64), center - GL_HALF_WIDTH * scale)
    lo = np.minimum(lo, hi)
    y, w = gauss_legendre(lo, hi, order)
    return np.sum(fn(y) * w, axis=-1)


class RandomTimeModel:
    """Interface shared by the single-time models."""

    kind: str = "abstract"
    dim: int = 0
    T_max: float = np.inf
    component: int = 0
    has_marks: bool = False
    deterministic_z: bool = False

    def check_horizon(self, t) -> None:
        if np.any(np.asarray(t) > self.T_max + 1e-12):
            raise HorizonError(
                f"{self.kind}: t={np.max(t)} exceeds validity horizon T_max={self.T_max}"
            )

    def check_driver(self, ensemble: PathEnsemble) -> None:
        if ensemble.dim < self.dim:
            raise ValueError(
                f"{self.kind} needs {self.dim} driver component(s), ensemble has {ensemble.dim}"
            )
        self.check_horizon(ensemble.grid.T)

    def sample(self, ensemble: PathEnsemble, aux_seed: Optional[int] = None) -> TimeSample:
        raise NotImplementedError

    def conditional_density(self, t, x, u, mark=None, convention: str = "law") -> DensityEval:
        raise NotImplementedError

    def azema_z(self, t, x):
        raise NotImplementedError

    def z_sensitivity(self, t, x):
        """``dZ/dx``, so that ``d<W, Z>_t = z_sensitivity dt``."""
        raise NotImplementedError

    def z_one_step_mean(self, t, t_next, x):
        """``E[Z_{t_next} | F_t]`` in closed form."""
        raise NotImplementedError

    def jacod_slope(self, t, x, u, mark=None):
        return self.conditional_density(t, x, u, mark).k

    def survival_log_mean(self, t, x):
        raise NotImplementedError(f"{self.kind} has no closed-form survival projection")


class _DeterministicSurvival(RandomTimeModel):
    """Time independent of the driver: ``p = 1``, ``q = k = 0``, ``Z`` deterministic."""

    deterministic_z = True

    def survival(self, t):
        raise NotImplementedError

    def law_pdf(self, u):
        raise NotImplementedError

    def conditional_density(self, t, x, u, mark=None, convention: str = "law") -> DensityEval:
        self.check_horizon(t)
        shape = np.broadcast(np.asarray(t), np.asarray(x), np.asarray(u)).shape
        if convention == "law":
            p = np.ones(shape)
        elif convention == "lebesgue":
            p = np.broadcast_to(self.law_pdf(np.asarray(u, dtype=np.float64)), shape).copy()
        else:
            raise ValueError(f"unknown density convention {convention!r}")
        return DensityEval(p, np.zeros(shape), np.zeros(shape))

    def azema_z(self, t, x):
        shape = np.broadcast(np.asarray(t), np.asarray(x)).shape
        return np.broadcast_to(self.survival(np.asarray(t, dtype=np.float64)), shape).copy()

    def z_sensitivity(self, t, x):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)

    def z_one_step_mean(self, t, t_next, x):
        return self.azema_z(t_next, x)


class Independent(_DeterministicSurvival):
    """Random time independent of the Brownian filtration, with a given law.

    ``law`` is any frozen ``scipy.stats`` distribution on the positive axis;
    the default is the unit-rate exponential.
    """

    kind = "independent"

    def __init__(self, law=None, rate: float = 1.0):
        if law is None:
            if rate <= 0:
                raise ValueError("rate must be positive")
            law = stats.expon(scale=1.0 / rate)
        if law.support()[0] < 0:
            raise ValueError("the law of a random time must live on [0, inf)")
        self.law = law

    def survival(self, t):
        return self.law.sf(t)

    def law_pdf(self, u):
        return self.law.pdf(u)

    def sample(self, ensemble, aux_seed=None):
        self.check_driver(ensemble)
        seed = ensemble.seed if aux_seed is None else aux_seed
        u = keyed_uniforms(seed, LAW_STREAM, ensemble.n_paths, 1, ensemble.stream_offset)[:, 0]
        return TimeSample(self.law.isf(u))


class CoxDeterministic(_DeterministicSurvival):
    """Default at the first time the cumulative hazard exceeds an Exp(1) draw.

    The hazard is piecewise constant: ``rates[i]`` on ``[breaks[i-1], breaks[i])``.
    """

    kind = "cox_deterministic"

    def __init__(self, rate=1.0, breaks: Sequence[float] = ()):
        rates = np.atleast_1d(np.asarray(rate, dtype=np.float64))
        breaks = np.asarray(breaks, dtype=np.float64)
        if rates.size != breaks.size + 1:
            raise ValueError("need exactly one more rate than breakpoints")
        if np.any(rates < 0) or rates[-1] <= 0:
            raise ValueError("hazard rates must be nonnegative with a positive tail rate")
        if breaks.size and (np.any(np.diff(breaks) <= 0) or breaks[0] <= 0):
            raise ValueError("breakpoints must be positive and increasing")
        self.rates = rates
        self.breaks = breaks
        self._knots = np.concatenate([[0.0], breaks])
        self._cum = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(self._knots))])

    def hazard(self, t):
        return self.rates[np.searchsorted(self.breaks, t, side="right")]

    def cumulative_hazard(self, t):
        t = np.asarray(t, dtype=np.float64)
        i = np.searchsorted(self.breaks, t, side="right")
        return self._cum[i] + self.rates[i] * (t - self._knots[i])

    def inverse_cumulative_hazard(self, e):
        e = np.asarray(e, dtype=np.float64)
        i = np.searchsorted(self._cum, e, side="right") - 1
        return self._knots[i] + (e - self._cum[i]) / self.rates[i]

    def survival(self, t):
        return np.exp(-self.cumulative_hazard(t))

    def law_pdf(self, u):
        return self.hazard(u) * self.survival(u)

    def sample(self, ensemble, aux_seed=None):
        self.check_driver(ensemble)
        seed = ensemble.seed if aux_seed is None else aux_seed
        u = keyed_uniforms(seed, LAW_STREAM, ensemble.n_paths, 1, ensemble.stream_offset)[:, 0]
        return TimeSample(self.inverse_cumulative_hazard(-np.log(u)))


class BridgeLognormal(RandomTimeModel):
    """``tau = exp(W_{T0})`` for one driver component.

    Given F_t, ``log tau ~ N(W_t, T0 - t)``, so the Jacod slope is the
    Brownian-bridge drift ``(log u - W_t) / (T0 - t)``.
    """

    kind = "bridge_lognormal"

    def __init__(self, T0: float = 2.0, component: int = 0, horizon_fraction: float = 0.9):
        if T0 <= 0:
            raise ValueError("anchor T0 must be positive")
        if not 0 < horizon_fraction < 1:
            raise ValueError("horizon_fraction must lie in (0, 1)")
        self.T0 = float(T0)
        self.component = int(component)
        self.dim = self.component + 1
        self.T_max = horizon_fraction * self.T0

    def scale(self, t):
        return np.sqrt(self.T0 - np.asarray(t, dtype=np.float64))

    def terminal_driver(self, ensemble: PathEnsemble, aux_seed=None, stream=EXTENSION_STREAM):
        """Extend the driver from the simulation horizon to ``T0``."""
        self.check_driver(ensemble)
        seed = ensemble.seed if aux_seed is None else aux_seed
        xi = keyed_normals(seed, stream, ensemble.n_paths, ensemble.dim, ensemble.stream_offset)
        gap = np.sqrt(self.T0 - ensemble.grid.T)
        return ensemble.terminal(self.component) + gap * xi[:, self.component]

    def sample(self, ensemble, aux_seed=None):
        return TimeSample(np.exp(self.terminal_driver(ensemble, aux_seed)))

    def log_density(self, t, x, u, convention: str = "law"):
        """Log of the conditional density of tau at ``u``."""
        t = np.asarray(t, dtype=np.float64)
        y = _log(u)
        s = self.scale(t)
        log_f = _norm_logpdf((y - x) / s) - np.log(s) - y
        if convention == "lebesgue":
            return log_f
        if convention != "law":
            raise ValueError(f"unknown density convention {convention!r}")
        s0 = np.sqrt(self.T0)
        log_f0 = _norm_logpdf(y / s0) - np.log(s0) - y
        return log_f - log_f0

    def jacod_slope(self, t, x, u, mark=None):
        t = np.asarray(t, dtype=np.float64)
        return (_log(u) - x) / (self.T0 - t)

    def conditional_density(self, t, x, u, mark=None, convention: str = "law") -> DensityEval:
        self.check_horizon(t)
        p = np.exp(self.log_density(t, x, u, convention))
        k = self.jacod_slope(t, x, u)
        return DensityEval(p, k * p, k)

    def azema_z(self, t, x):
        return ndtr((x - _log(t)) / self.scale(t))

    def z_sensitivity(self, t, x):
        s = self.scale(t)
        return _norm_pdf((x - _log(t)) / s) / s

    def z_one_step_mean(self, t, t_next, x):
        return ndtr((x - _log(t_next)) / self.scale(t))

    def survival_log_mean(self, t, x):
        """``E[log tau | F_t, tau > t]``: a Gaussian mean shifted by the inverse Mills ratio."""
        s = self.scale(t)
        a = (_log(t) - x) / s
        return x + s * np.exp(_norm_logpdf(a) - log_ndtr(-a))

    def log_window(self, t, x):
        """Center and scale of the conditional law of ``log tau``."""
        return np.asarray(x, dtype=np.float64), self.scale(t)


class MarkedBridge(BridgeLognormal):
    """Bridge time carrying a mark ``X``.

    ``mark="rademacher"`` draws ``X = +-1`` independently of everything;
    ``mark="sign"`` sets ``X = sign(W_{T0})``. In both cases the joint
    conditional density of ``(tau, X)`` against its law equals the density of
    ``tau`` on the support, so the marked Jacod slope equals the plain one.
    """

    kind = "marked_bridge"
    has_marks = True

    def __init__(self, T0: float = 2.0, mark: str = "rademacher", component: int = 0,
                 horizon_fraction: float = 0.9):
        super().__init__(T0, component, horizon_fraction)
        if mark not in ("rademacher", "sign"):
            raise ValueError(f"unknown mark law {mark!r}")
        self.mark = mark

    def sample(self, ensemble, aux_seed=None):
        w_end = self.terminal_driver(ensemble, aux_seed)
        if self.mark == "sign":
            x = np.where(w_end > 0, 1.0, -1.0)
        else:
            seed = ensemble.seed if aux_seed is None else aux_seed
            u = keyed_uniforms(seed, MARK_STREAM, ensemble.n_paths, 1, ensemble.stream_offset)
            x = np.where(u[:, 0] < 0.5, 1.0, -1.0)
        return TimeSample(np.exp(w_end), x)

    def joint_support(self, u, mark):
        if self.mark == "rademacher":
            return np.isin(mark, (-1.0, 1.0))
        return np.asarray(mark) == np.where(_log(u) > 0, 1.0, -1.0)

    def conditional_density(self, t, x, u, mark=None, convention: str = "law") -> DensityEval:
        plain = super().conditional_density(t, x, u, convention=convention)
        if mark is None:
            return plain
        on = self.joint_support(u, mark)
        p = np.where(on, plain.p, 0.0)
        return DensityEval(p, np.where(on, plain.q, 0.0), plain.k)


class IndependentDriverFamily:
    """``n`` times ``tau_i = exp(W^i_{T0})`` on independent driver components.

    The joint conditional density factorizes over components, so every
    subset marginal, subset survival and Jacod slope is closed-form.
    """

    kind = "independent_driver_family"
    factorized = True

    def __init__(self, n: int, T0: float = 2.0, marks: Optional[str] = None,
                 horizon_fraction: float = 0.9):
        if not 1 <= n <= 10:
            raise ValueError(f"family size must be between 1 and 10, got {n}")
        if marks not in (None, "rademacher"):
            raise ValueError(f"unknown mark law {marks!r}")
        self.n = int(n)
        self.T0 = float(T0)
        self.marks = marks
        self.dim = self.n
        self.members = [BridgeLognormal(T0, i, horizon_fraction) for i in range(self.n)]
        self.T_max = self.members[0].T_max

    @property
    def has_marks(self) -> bool:
        return self.marks is not None

    def check_horizon(self, t):
        self.members[0].check_horizon(t)

    def check_driver(self, ensemble: PathEnsemble):
        if ensemble.dim < self.dim:
            raise ValueError(
                f"family of {self.n} times needs {self.dim} driver components, ensemble has {ensemble.dim}"
            )
        self.check_horizon(ensemble.grid.T)

    def sample(self, ensemble: PathEnsemble, aux_seed=None) -> TimeSample:
        self.check_driver(ensemble)
        seed = ensemble.seed if aux_seed is None else aux_seed
        xi = keyed_normals(seed, EXTENSION_STREAM, ensemble.n_paths, ensemble.dim,
                           ensemble.stream_offset)[:, : self.n]
        w_end = ensemble.values[:, -1, : self.n] + np.sqrt(self.T0 - ensemble.grid.T) * xi
        marks = None
        if self.marks == "rademacher":
            u = keyed_uniforms(seed, MARK_STREAM, ensemble.n_paths, self.n, ensemble.stream_offset)
            marks = np.where(u < 0.5, 1.0, -1.0)
        return TimeSample(np.exp(w_end), marks)

    def _check_subset(self, I):
        I = tuple(sorted(I))
        if any(i < 0 or i >= self.n for i in I):
            raise ValueError(f"index set {I} not contained in 0..{self.n - 1}")
        return I

    def joint_density(self, t, x, u, convention: str = "law"):
        self.check_horizon(t)
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        return self.marginal_density(t, x, range(self.n), u, convention)

    def marginal_density(self, t, x, I, u_I, convention: str = "law"):
        """Closed-form density of ``tau_I``: the product over ``I``.

        ``u_I`` has a trailing axis of length ``len(I)``, ordered like ``sorted(I)``.
        """
        I = self._check_subset(I)
        self.check_horizon(t)
        x = np.asarray(x, dtype=np.float64)
        u_I = np.asarray(u_I, dtype=np.float64)
        log_p = np.zeros(np.broadcast(np.asarray(t), x[..., 0]).shape)
        for pos, i in enumerate(I):
            log_p = log_p + self.members[i].log_density(t, x[..., i], u_I[..., pos], convention)
        return np.exp(log_p)

    def z_subset(self, t, x, I, tau_I=None):
        """``P(rho_I > t | F_t v sigma(tau_I))``; independence makes ``tau_I`` irrelevant."""
        I = self._check_subset(I)
        self.check_horizon(t)
        x = np.asarray(x, dtype=np.float64)
        out = np.ones(np.broadcast(np.asarray(t), x[..., 0]).shape)
        for j in range(self.n):
            if j not in I:
                out = out * self.members[j].azema_z(t, x[..., j])
        return out

    def z_subset_one_step_mean(self, t, t_next, x, I):
        I = self._check_subset(I)
        x = np.asarray(x, dtype=np.float64)
        out = np.ones(np.broadcast(np.asarray(t), x[..., 0]).shape)
        for j in range(self.n):
            if j not in I:
                out = out * self.members[j].z_one_step_mean(t, t_next, x[..., j])
        return out

    def z_subset_sensitivity(self, t, x, I, c: int):
        """``dZ^I / dx_c``."""
        I = self._check_subset(I)
        x = np.asarray(x, dtype=np.float64)
        shape = np.broadcast(np.asarray(t), x[..., 0]).shape
        if c in I or c >= self.n:
            return np.zeros(shape)
        out = self.members[c].z_sensitivity(t, x[..., c])
        for j in range(self.n):
            if j not in I and j != c:
                out = out * self.members[j].azema_z(t, x[..., j])
        return out

    def jacod_slope_subset(self, t, x, I, tau_I, c: int):
        """Slope of ``log p^I_t(tau_I)`` in driver direction ``c``.

        ``tau_I`` is a mapping ``i -> array`` over ``i in I``.
        """
        I = self._check_subset(I)
        x = np.asarray(x, dtype=np.float64)
        if c not in I:
            return np.zeros(np.broadcast(np.asarray(t), x[..., 0]).shape)
        return self.members[c].jacod_slope(t, x[..., c], tau_I[c])

    def log_window(self, i, t, x):
        return self.members[i].log_window(t, np.asarray(x)[..., i])


def z_martingale_part(model: RandomTimeModel, ensemble: PathEnsemble) -> GridProcess:
    """Martingale part of the Azema supermartingale along the driver paths.

    Increments are ``Z_{t_{i+1}} - E[Z_{t_{i+1}} | F_{t_i}]`` using the
    model's closed-form one-step transition.
    """
    model.check_driver(ensemble)
    grid = ensemble.grid
    t = grid.nodes
    x = ensemble.values[:, :, model.component] if model.dim else np.zeros((ensemble.n_paths, grid.K + 1))
    z_next = model.azema_z(t[1:], x[:, 1:])
    mean_next = model.z_one_step_mean(t[:-1], t[1:], x[:, :-1])
    mu = np.zeros((ensemble.n_paths, grid.K + 1))
    np.cumsum(z_next - mean_next, axis=1, out=mu[:, 1:])
    return GridProcess(grid, mu)


def azema_path(model: RandomTimeModel, ensemble: PathEnsemble) -> GridProcess:
    model.check_driver(ensemble)
    t = ensemble.grid.nodes
    x = ensemble.values[:, :, model.component] if model.dim else np.zeros((ensemble.n_paths, t.size))
    return GridProcess(ensemble.grid, model.azema_z(t, x))


def sample_time(model, ensemble: PathEnsemble, aux_seed: Optional[int] = None) -> TimeSample:
    return model.sample(ensemble, aux_seed)


def conditional_density(model, t, x, u, mark=None, convention: str = "law") -> DensityEval:
    return model.conditional_density(t, x, u, mark, convention)


def azema_z(model, t, x):
    model.check_horizon(t)
    return model.azema_z(t, x)


def bridge_normalization(model: BridgeLognormal, t, x, order: int = GL_ORDER):
    """``int p_t(u) eta(du)`` by Gauss-Legendre in ``log u``, with eta the law of tau."""
    center, scale = model.log_window(t, x)
    s0 = np.sqrt(model.T0)
    t = np.asarray(t, dtype=np.float64)

    def integrand(y):
        p = np.exp(model.log_density(t[..., None], center[..., None], np.exp(y)))
        return p * _norm_pdf(y / s0) / s0

    return log_window_quadrature(integrand, center, scale, order=order)


def bridge_tail_mass(model: BridgeLognormal, t, x, order: int = GL_ORDER):
    """``int_{(t, inf)} p_t(u) eta(du)``: the Azema supermartingale by quadrature."""
    center, scale = model.log_window(t, x)
    s0 = np.sqrt(model.T0)
    t = np.asarray(t, dtype=np.float64)

    def integrand(y):
        p = np.exp(model.log_density(t[..., None], center[..., None], np.exp(y)))
        return p * _norm_pdf(y / s0) / s0

    return log_window_quadrature(integrand, center, scale, lower=_log(t), order=order)


def bridge_q_integral(model: BridgeLognormal, t, x, lower=None, order: int = GL_ORDER):
    """``int_{u > lower} q_t(u) du`` in the Lebesgue convention.

    With ``lower=None`` the integral runs over all of ``(0, inf)`` and should
    vanish; with ``lower=t`` it is the driver sensitivity of ``Z_t``.
    """
    center, scale = model.log_window(t, x)
    t = np.asarray(t, dtype=np.float64)

    def integrand(y):
        u = np.exp(y)
        d = model.conditional_density(t[..., None], center[..., None], u, convention="lebesgue")
        return d.q * u  # du = u dy

    bound = -np.inf if lower is None else _log(lower)
    return log_window_quadrature(integrand, center, scale, lower=bound, order=order)
