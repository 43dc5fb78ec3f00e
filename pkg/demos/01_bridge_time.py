"""
A random time that peeks at the future of the driver
=====================================================

tau = exp(W_2) depends on where the Brownian driver ends up at time 2, so
watching W on [0, 1] is informative about tau.  This script samples the
time, looks at its conditional density and survival probability, and
checks the closed forms against quadrature.
"""
import numpy as np

from progexp import BridgeLognormal, make_grid, simulate_brownian
from progexp.models import bridge_normalization, bridge_tail_mass, z_martingale_part

grid = make_grid(1.0, 100)
ens = simulate_brownian(grid, 1, 50_000, seed=1)
model = BridgeLognormal(T0=2.0)
tau = model.sample(ens).tau

# W_2 is symmetric, so the median of tau is 1
print("P(tau < 1) =", np.mean(tau < 1.0))
print("share of times inside [0, 1]:", np.mean(tau <= 1.0))

# Conditional density of tau given W_t, against the law of tau.  At t = 0 it is 1.
u = np.exp([-1.0, 0.0, 1.0])
for t, x in [(0.0, 0.0), (0.5, 0.8), (1.0, -0.5)]:
    d = model.conditional_density(t, x, u)
    print(f"t={t}, W_t={x:+.1f}:  p={np.round(d.p, 4)}  slope k={np.round(d.k, 4)}")

# The survival probability Z_t = P(tau > t | F_t), closed form vs quadrature of the density
t = np.linspace(0.0, 1.0, 5)
x = np.linspace(-2.0, 2.0, 5)
print("max |Z - tail integral| =", np.max(np.abs(model.azema_z(t, x) - bridge_tail_mass(model, t, x))))
print("max |integral of p - 1| =", np.max(np.abs(bridge_normalization(model, t, x) - 1)))

# Z is a supermartingale; its martingale part mu has mean zero at every node
mu = z_martingale_part(model, ens).values
print("largest |mean(mu_t)| / SE:", np.max(np.abs(mu.mean(0)[1:]) / (mu.std(0)[1:] / np.sqrt(mu.shape[0]))))
