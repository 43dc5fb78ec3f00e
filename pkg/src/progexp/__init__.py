"""Decompositions of Brownian martingales in progressively expanded filtrations.

Simulate driver paths on a grid, draw random times from models with closed
form conditional laws, split a martingale into its martingale part and the
drift it acquires once the times become stopping times, and test the result
statistically.
"""
from .grid import (
    GridProcess,
    PathEnsemble,
    TimeGrid,
    covariation,
    ito_integrate,
    keyed_normals,
    keyed_uniforms,
    make_grid,
    simulate_brownian,
)
from .lab import (
    ShrinkageReport,
    TestReport,
    conditional_increment_lemma_check,
    density_martingale_test,
    family_features,
    g_features,
    increment_regression_test,
    martingale_test,
    shrinkage_check,
)
from .models import (
    BridgeLognormal,
    CoxDeterministic,
    DensityEval,
    HorizonError,
    Independent,
    IndependentDriverFamily,
    MarkedBridge,
    TimeSample,
    azema_z,
    conditional_density,
    sample_time,
)
from .multi import (
    MarkedFamily,
    all_subsets,
    marginal_density,
    multi_drift,
    n_process,
    subset_quantities,
    telescope_residual,
    windowed,
)
from .single import (
    Decomposition,
    DrivenMartingale,
    decompose_single,
    jacod_after_drift,
    jeulin_yor_drift,
    jy_ingredients,
    linear_martingale,
)

__version__ = "0.1.0"
