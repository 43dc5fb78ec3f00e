"""Named checks runnable from a scenario file.

Each check reads what it needs from a :class:`Context` (ensemble, sampled
times and decomposition are built lazily and shared) and returns a
:class:`CheckResult` with a pass flag, scalar metrics and the z-statistic
records of any martingale tests it ran.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Callable, Dict, FrozenSet, List, Optional

import numpy as np
from scipy.special import ndtr

from .grid import make_grid, simulate_brownian
from .lab import (
    BridgeSlope,
    conditional_increment_lemma_check,
    default_pairs,
    density_martingale_test,
    family_features,
    g_features,
    martingale_test,
    q_integral_lattice,
    shrinkage_check,
)
from .models import (
    BridgeLognormal,
    IndependentDriverFamily,
    TimeSample,
    bridge_normalization,
    bridge_tail_mass,
)
from .multi import multi_drift, n_process, telescope_residual, window_cover_counts
from .single import decompose_single

SINGLE = frozenset({"independent", "cox_deterministic", "bridge_lognormal", "marked_bridge"})
NULL = frozenset({"independent", "cox_deterministic"})
BRIDGE = frozenset({"bridge_lognormal", "marked_bridge"})
FAMILY = frozenset({"independent_driver_family"})
ALL = SINGLE | FAMILY

LATTICE_TOL = 1e-6
ORACLE_STEPS = 5  # sup error allowed, in units of the grid step
TELESCOPE_CONFIGS = 1000
TELESCOPE_TOL = 1e-12
CONTROL_GAP = 1e-2
CONTROL_SHARE = 0.99


def additivity_tol(dec) -> float:
    """Round-off allowance for ``M = martingale + before + after`` at each node."""
    scale = 1.0 + max(np.max(np.abs(v.values)) for v in
                      (dec.original, dec.drift_before, dec.drift_after))
    return 16 * np.finfo(np.float64).eps * scale


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: Dict[str, object] = field(default_factory=dict)
    records: List[dict] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)


class Context:
    """Lazily built simulation objects for one scenario."""

    def __init__(self, scenario, n_paths: Optional[int] = None):
        self.scenario = scenario
        self.n_paths = scenario.n_paths if n_paths is None else n_paths
        self.grid = make_grid(scenario.T, scenario.K)
        self.model = scenario.build_model()
        self.martingale = scenario.build_martingale()

    @property
    def is_family(self) -> bool:
        return isinstance(self.model, IndependentDriverFamily)

    @cached_property
    def ensemble(self):
        sc = self.scenario
        return simulate_brownian(self.grid, sc.driver_dim, self.n_paths, sc.seed, sc.stream_offset)

    @cached_property
    def sample(self):
        return self.model.sample(self.ensemble)

    @cached_property
    def decomposition(self):
        sc = self.scenario
        if self.is_family:
            return multi_drift(self.martingale, self.ensemble, self.model, self.sample, sc.bracket)
        g = None
        if sc.mode == "plugged":
            model = self.model
            if sc.plug == "zero" or not isinstance(model, BridgeLognormal):
                g = lambda t, x, tau: np.zeros(np.broadcast(t, x, tau).shape)
            else:
                g = lambda t, x, tau: model.jacod_slope(t, x, tau)
        return decompose_single(self.martingale, self.ensemble, self.model, self.sample,
                                sc.mode, g, sc.bracket)

    @cached_property
    def features(self):
        if self.is_family:
            return family_features(self.ensemble, self.sample)
        comps = sorted({0, self.martingale.component})
        return g_features(self.ensemble, self.sample, self.model, comps)

    @cached_property
    def azema(self) -> np.ndarray:
        """``Z`` (single time) or ``Z`` of the first of the times (family) along the paths."""
        x = self.ensemble.values
        t = self.grid.nodes
        if self.is_family:
            return self.model.z_subset(t, x, ())
        if self.model.dim:
            return self.model.azema_z(t, x[:, :, self.model.component])
        return self.model.azema_z(t, np.zeros(x.shape[:2]))


def _test(ctx, N, op, features=None, mask=None):
    rep = martingale_test(N, ctx.features if features is None else features, mask=mask)
    return rep, rep.to_records(ctx.scenario.id, op)


def _horizon_z(ctx, rep) -> float:
    return rep.max_abs_z_at(default_pairs(ctx.grid)[-1])


# --- checks ---------------------------------------------------------------

def check_single_decomposition(ctx) -> CheckResult:
    dec = ctx.decomposition
    rep, recs = _test(ctx, dec.martingale_part, "martingale_test:corrected")
    resid = dec.additivity_residual()
    tol = additivity_tol(dec)
    ok = rep.passed and resid <= tol
    return CheckResult("single-decomposition", ok, {
        "max_abs_z": rep.max_abs_z,
        "additivity_residual": resid,
        "additivity_tol": tol,
        "truncation_fraction": dec.truncation_fraction,
    }, recs, rep.notes)


def check_bridge_power(ctx) -> CheckResult:
    # passes only if the uncorrected process looks like a martingale, which it should not
    rep, recs = _test(ctx, ctx.decomposition.original, "martingale_test:uncorrected")
    return CheckResult("bridge-power", rep.passed, {
        "max_abs_z": rep.max_abs_z,
        "horizon_abs_z": _horizon_z(ctx, rep),
        "verdict": rep.verdict,
    }, recs, rep.notes)


def check_null_drift(ctx) -> CheckResult:
    dec = ctx.decomposition
    drift_max = float(np.max(np.abs(dec.drift.values)))
    rep, recs = _test(ctx, dec.martingale_part, "martingale_test:corrected")
    return CheckResult("null-drift", drift_max == 0.0 and rep.passed, {
        "max_abs_drift": drift_max, "max_abs_z": rep.max_abs_z,
    }, recs, rep.notes)


def check_density_martingale(ctx) -> CheckResult:
    us = np.exp(np.linspace(-1.0, 1.0, 5))
    rep = density_martingale_test(ctx.model, ctx.ensemble, us)
    recs = rep.to_records(ctx.scenario.id, "density_regression")
    return CheckResult("density-martingale", rep.passed, {
        "max_abs_z": rep.max_abs_z, "u_values": [float(u) for u in us],
    }, recs, rep.notes)


def _state_lattice(grid, n=20, width=3.0):
    t = np.linspace(0.0, grid.T, n)[:, None]
    x = np.linspace(-width, width, n)[None, :] * np.sqrt(grid.T)
    return np.broadcast_arrays(t, x)


def check_density_normalization(ctx) -> CheckResult:
    t, x = _state_lattice(ctx.grid)
    norm = float(np.max(np.abs(bridge_normalization(ctx.model, t, x) - 1.0)))
    tail = float(np.max(np.abs(bridge_tail_mass(ctx.model, t, x) - ctx.model.azema_z(t, x))))
    return CheckResult("density-normalization", norm < LATTICE_TOL and tail < LATTICE_TOL, {
        "normalization_error": norm, "z_tail_error": tail, "tolerance": LATTICE_TOL,
    })


def check_q_integral_zero(ctx) -> CheckResult:
    q = q_integral_lattice(ctx.model, ctx.grid)
    return CheckResult("q-integral-zero", q < LATTICE_TOL, {"q_integral_max": q})


def check_lemma(ctx) -> CheckResult:
    ens, sample = ctx.ensemble, ctx.sample
    _, M_const = conditional_increment_lemma_check(1.0, ens, sample)
    _, M_adapted = conditional_increment_lemma_check(ctx.decomposition.drift_after, ens, sample)
    rep, M = conditional_increment_lemma_check(BridgeSlope(ctx.model, before=True), ens, sample,
                                               ctx.features)
    const_max = float(np.max(np.abs(M_const.values)))
    adapted_max = float(np.max(np.abs(M_adapted.values)))
    ok = rep.passed and const_max == 0.0 and adapted_max == 0.0
    return CheckResult("lemma-conditional-increment", ok, {
        "constant_max_abs": const_max,
        "adapted_max_abs": adapted_max,
        "max_abs_z": rep.max_abs_z,
    }, rep.to_records(ctx.scenario.id, "lemma:bridge-slope"), rep.notes)


def check_marked_coincidence(ctx) -> CheckResult:
    ens, model, sample = ctx.ensemble, ctx.model, ctx.sample
    sc = ctx.scenario
    plain = decompose_single(ctx.martingale, ens, model, sample, "plain", bracket=sc.bracket)
    marked = decompose_single(ctx.martingale, ens, model, sample, "marked", bracket=sc.bracket)
    equal = bool(np.array_equal(plain.martingale_part.values, marked.martingale_part.values))
    rep, recs = _test(ctx, marked.martingale_part, "martingale_test:marked")
    return CheckResult("marked-coincidence", equal and rep.passed, {
        "mark": model.mark, "exact_equality": equal, "max_abs_z": rep.max_abs_z,
    }, recs, rep.notes)


def check_shrinkage(ctx) -> CheckResult:
    rep = shrinkage_check(ctx.model, ctx.ensemble, ctx.sample, ctx.martingale)
    share = float(np.mean(rep.control_discrepancy > CONTROL_GAP))
    ok = rep.max_discrepancy < LATTICE_TOL and rep.q_integral_max < LATTICE_TOL and \
        share >= CONTROL_SHARE
    return CheckResult("shrinkage-eq40", ok, {
        "sup_discrepancy": rep.max_discrepancy,
        "q_integral_max": rep.q_integral_max,
        "control_share_above_gap": share,
        "control_gap": CONTROL_GAP,
    })


def check_multi_reduction(ctx) -> CheckResult:
    sc = ctx.scenario
    fam = IndependentDriverFamily(1, ctx.model.T0)
    ens = ctx.ensemble
    single = decompose_single(ctx.martingale, ens, ctx.model, ctx.sample, bracket=sc.bracket)
    fs = fam.sample(ens)
    multi = multi_drift(ctx.martingale, ens, fam, fs, sc.bracket)
    same_tau = bool(np.array_equal(fs.tau[:, 0], ctx.sample.tau))
    equal = all(np.array_equal(a.values, b.values) for a, b in (
        (single.martingale_part, multi.martingale_part),
        (single.drift_before, multi.drift_before),
        (single.drift_after, multi.drift_after),
    ))
    diff = float(np.max(np.abs(single.martingale_part.values - multi.martingale_part.values)))
    return CheckResult("multi-reduction", same_tau and equal, {
        "same_times": same_tau, "exact_equality": equal, "max_abs_difference": diff,
    })


def _multi_drift_check(n):
    def run(ctx) -> CheckResult:
        dec = ctx.decomposition
        rep, recs = _test(ctx, dec.martingale_part, "martingale_test:corrected")
        raw, raw_recs = _test(ctx, dec.original, "martingale_test:uncorrected")
        return CheckResult(f"multi-drift-n{n}", rep.passed, {
            "n": n,
            "max_abs_z": rep.max_abs_z,
            "uncorrected_horizon_abs_z": _horizon_z(ctx, raw),
            "truncation_fraction": dec.truncation_fraction,
        }, recs + raw_recs, rep.notes)

    return run


def check_multi_oracle(ctx) -> CheckResult:
    """Windowed drift increments against the one-time bridge formulas.

    With independent drivers and ``M`` driven by component ``c`` only the
    time ``tau_c`` carries information about ``M``: the drift on every
    window reduces to the Jeulin-Yor drift of ``tau_c`` before it and the
    Jacod drift of ``tau_c`` after it.
    """
    fam, ens, sample = ctx.model, ctx.ensemble, ctx.sample
    c = ctx.martingale.component
    dec = multi_drift(ctx.martingale, ens, fam, sample, "analytic")
    member = BridgeLognormal(fam.T0, component=c)
    oracle = decompose_single(ctx.martingale, ens, member, TimeSample(sample.tau[:, c]),
                              bracket="analytic")
    err = float(np.max(np.abs(dec.drift.increments() - oracle.drift.increments())))
    bound = ORACLE_STEPS * ctx.grid.dt
    return CheckResult("multi-window-oracle", err <= bound, {
        "sup_increment_error": err, "bound": bound,
    })


def check_n_process(ctx) -> CheckResult:
    taus, marks = ctx.sample.tau, ctx.sample.mark
    N = n_process(ctx.grid, taus, marks)
    hit = ctx.grid.snap(taus) <= ctx.grid.K
    bookkeeping = float(np.max(np.abs(N.values[:, -1] - np.sum(np.where(hit, marks, 0.0), axis=1))))
    rep, recs = _test(ctx, N, "martingale_test:n-process")
    return CheckResult("n-process", rep.passed and bookkeeping == 0.0, {
        "terminal_bookkeeping_error": bookkeeping, "max_abs_z": rep.max_abs_z,
    }, recs, rep.notes)


def check_telescope(ctx) -> CheckResult:
    grid = ctx.grid
    M = ctx.decomposition.original
    rng = np.random.Generator(np.random.Philox(key=ctx.scenario.seed))
    worst = 0.0
    for cfg in range(TELESCOPE_CONFIGS):
        n = int(rng.integers(1, 6))
        idx = rng.integers(0, grid.K + 2, size=n)  # K + 1 puts the time past the horizon
        taus = np.where(idx <= grid.K, grid.nodes[np.minimum(idx, grid.K)], 2.0 * grid.T + 1.0)
        path = cfg % M.n_paths
        worst = max(worst, telescope_residual(M.subset([path]), taus))
    return CheckResult("telescope", worst <= TELESCOPE_TOL, {
        "configurations": TELESCOPE_CONFIGS, "max_residual": worst, "tolerance": TELESCOPE_TOL,
    })


def check_window_partition(ctx) -> CheckResult:
    counts = window_cover_counts(ctx.grid, ctx.sample.tau)
    return CheckResult("window-partition", bool(np.all(counts == 1)), {
        "min_cover": int(counts.min()), "max_cover": int(counts.max()),
    })


def check_z_empty(ctx) -> CheckResult:
    """``Z`` of the empty index set against the survival of ``min tau_i``.

    The oracle goes through inclusion-exclusion over the distribution
    functions ``P(tau_i <= t | F_t)`` instead of the product of survivals.
    """
    fam = ctx.model
    t = ctx.grid.nodes
    x = ctx.ensemble.values[:, :, : fam.n]
    z = fam.z_subset(t, x, ())
    log_t = np.log(np.maximum(t, 1e-300))
    cdf = [ndtr((np.where(t > 0, log_t, -np.inf) - x[:, :, i]) / member.scale(t))
           for i, member in enumerate(fam.members)]
    hit = np.zeros_like(z)
    for size in range(1, fam.n + 1):
        for S in combinations(range(fam.n), size):
            hit += (-1) ** (size + 1) * np.prod([cdf[i] for i in S], axis=0)
    err = float(np.max(np.abs(z - (1.0 - hit))))
    return CheckResult("z-empty-consistency", err < LATTICE_TOL, {
        "max_abs_error": err, "tolerance": LATTICE_TOL,
    })


# --- registry -------------------------------------------------------------

def _needs_family(n=None, marks=False):
    def req(sc):
        if n is not None and int(sc.model_block.get("n", 2)) != n:
            return f"needs an independent_driver_family with n = {n}"
        if marks and sc.model_block.get("marks") != "rademacher":
            return "needs marks: rademacher"
        return None

    return req


def _needs_shared_driver(sc):
    if sc.component != 0:
        return "needs the martingale on the driver of the random time (component 0)"
    return None


@dataclass(frozen=True)
class Check:
    name: str
    description: str
    kinds: FrozenSet[str]
    run: Callable[[Context], CheckResult]
    requires: Callable = lambda sc: None


_CHECKS = [
    Check("bridge-power",
          "uncorrected martingale under the expanded features; fails by design (power control)",
          BRIDGE | FAMILY, check_bridge_power),
    Check("density-martingale",
          "conditional density p_t(u) is a martingale in t for fixed u (increment regression)",
          BRIDGE, check_density_martingale),
    Check("density-normalization",
          "density integrates to one and its tail mass equals the Azema supermartingale",
          BRIDGE, check_density_normalization),
    Check("lemma-conditional-increment",
          "projected integral minus integrated projection is an expanded-filtration martingale",
          frozenset({"bridge_lognormal"}), check_lemma, _needs_shared_driver),
    Check("marked-coincidence",
          "marked-time decomposition equals the plain one and its martingale part passes",
          frozenset({"marked_bridge"}), check_marked_coincidence),
    Check("multi-drift-n2",
          "two unordered times: windowed drift makes the martingale pass",
          FAMILY, _multi_drift_check(2), _needs_family(2)),
    Check("multi-drift-n3",
          "three unordered times: windowed drift makes the martingale pass",
          FAMILY, _multi_drift_check(3), _needs_family(3)),
    Check("multi-reduction",
          "the several-times drift with one time reproduces the one-time decomposition exactly",
          frozenset({"bridge_lognormal"}), check_multi_reduction, _needs_shared_driver),
    Check("multi-window-oracle",
          "windowed drift increments match the one-time bridge formulas within 5 grid steps",
          FAMILY, check_multi_oracle),
    Check("n-process",
          "marked counting process of the times is a martingale in the expanded filtration",
          FAMILY, check_n_process, _needs_family(marks=True)),
    Check("null-drift",
          "time independent of the driver: zero drift and the martingale passes",
          NULL, check_null_drift),
    Check("q-integral-zero",
          "density volatility integrates to zero over all times, on a node lattice",
          BRIDGE, check_q_integral_zero),
    Check("shrinkage-eq40",
          "projected initial-expansion drift equals the Jeulin-Yor drift before the time",
          frozenset({"bridge_lognormal"}), check_shrinkage, _needs_shared_driver),
    Check("single-decomposition",
          "one time: corrected martingale passes and the pieces add up to M at every node",
          SINGLE, check_single_decomposition),
    Check("telescope",
          "windowed increments over all index sets sum to the whole path (1000 configurations)",
          ALL, check_telescope),
    Check("window-partition",
          "every grid step lies in exactly one active window",
          FAMILY, check_window_partition),
    Check("z-empty-consistency",
          "Z of the empty index set equals the survival of the first time",
          FAMILY, check_z_empty),
]

REGISTRY: Dict[str, Check] = {c.name: c for c in sorted(_CHECKS, key=lambda c: c.name)}


def list_checks() -> str:
    width = max(len(n) for n in REGISTRY)
    return "\n".join(f"{name:<{width}}  {REGISTRY[name].description}" for name in REGISTRY)


def run_check(name: str, ctx: Context) -> CheckResult:
    return REGISTRY[name].run(ctx)
