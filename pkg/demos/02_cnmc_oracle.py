"""
Constant-number Monte Carlo as an independent oracle
====================================================

A particle ensemble of fixed size coagulates event by event. Each event
merges a random pair and duplicates a random survivor, so the count stays at
N while the represented volume grows. Ensemble averages of p^i s^j estimate
the same nine moments the ODE model predicts.
"""

import numpy as np

from granmpc.cnmc import coagulation_event, ensemble_moments, init_monodisperse, run_batch
from granmpc.moments import NAMES, FeedSpec, KernelSpec, feed_moments, integrate

kernel = KernelSpec(k0=0.06)

# Two particles have only one possible pair.
ens = init_monodisperse(2, 1.0, 0.1, 1.0)
ens, dt = coagulation_event(ens, kernel, np.random.default_rng(0))
print("after one event:", ens.p, ens.s, "concentration", ens.concentration, "dt", round(dt, 3))

# Replicate batch runs against the closed model.
times = np.linspace(0.0, 10.0, 6)
runs = np.array([run_batch(init_monodisperse(10_000, 1.0, 0.1, 1.0), kernel, 10.0,
                           np.random.default_rng(seed), times)[1] for seed in range(10)])
model = integrate(feed_moments(FeedSpec(0.0, 1.0, 1.0, 0.1)), FeedSpec(0.0, 0.0, 1.0, 0.1),
                  kernel, 0.01, 10.0).states[::200]

mean = runs.mean(axis=0)
se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
print(f"{'moment':>6} {'cNMC(10)':>10} {'model(10)':>10} {'SE':>9}")
for j, name in enumerate(NAMES):
    print(f"{name:>6} {mean[-1, j]:10.5f} {model[-1, j]:10.5f} {se[-1, j]:9.2e}")

# Monte Carlo error shrinks roughly as 1/sqrt(N).
for n in (100, 1000, 10_000):
    vals = [run_batch(init_monodisperse(n, 1.0, 0.1, 1.0), kernel, 10.0,
                      np.random.default_rng(s))[1][-1, 0] for s in range(10)]
    print(f"N={n:>6}: m00(10) spread {np.std(vals):.2e}")

final = ensemble_moments(ens)
print("two-particle ensemble moments:", final.m00, final.m10, final.m01)
