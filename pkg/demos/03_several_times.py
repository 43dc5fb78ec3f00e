"""
Several unordered times
=======================

With n times the horizon splits into windows [sigma_I, rho_I): sigma_I is the
last time already seen in I and rho_I the first one outside it.  Exactly one
window is active at each step, and on it the drift has an after-time part
(from the times in I) and a before-time part (from rho_I).
"""
import numpy as np

from progexp import (
    IndependentDriverFamily,
    all_subsets,
    family_features,
    linear_martingale,
    make_grid,
    martingale_test,
    multi_drift,
    n_process,
    simulate_brownian,
    subset_quantities,
    telescope_residual,
)
from progexp.multi import window_cover_counts

taus = np.array([0.3, 0.7])
for I in all_subsets(2):
    sigma, rho, active = subset_quantities(taus, I)
    print(f"I={I}: sigma={sigma}, rho={rho}, active={bool(active)}")

grid = make_grid(1.0, 100)
n = 3
ens = simulate_brownian(grid, n, 50_000, seed=3)
family = IndependentDriverFamily(n, T0=2.0, marks="rademacher")
sample = family.sample(ens)

print("windows covering each step:", np.unique(window_cover_counts(grid, sample.tau)))
print("telescoping residual:", telescope_residual(ens.component(0), sample.tau))

dec = multi_drift(linear_martingale(), ens, family, sample)
feats = family_features(ens, sample)
print(f"corrected W^1: max|z| = {martingale_test(dec.martingale_part, feats).max_abs_z:.2f}")
print(f"raw W^1:       max|z| = {martingale_test(dec.original, feats).max_abs_z:.1f}")

N = n_process(grid, sample.tau, sample.mark)
print("marked counting process, mean at T:", N.values[:, -1].mean())
