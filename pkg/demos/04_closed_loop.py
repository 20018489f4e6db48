"""
Stochastic versus nominal MPC in closed loop
============================================

Both controllers choose the feed drug content s_f once per sample period
from the measured moment state. The stochastic controller predicts means and
variances through the chaos surrogate, penalizes the variance of the drug
ratio and enforces chance constraints on the drug second moment; the nominal
controller plans on the noise-free model with hard bounds.
A few runs per controller keep this demo under two minutes; the full
100-run campaigns run through ``granmpc campaign``.
"""

import numpy as np

from granmpc.controller import NoiseSpec, build_predictions, kappa
from granmpc.harness import compare, paper_preset, run_campaign

print(f"kappa(0.85) = {kappa(0.85):.6f}")

cfg = paper_preset("smpc")
pred = build_predictions(cfg.plant.initial_state, [0.2, 0.2, 0.2], cfg.noise, cfg.control,
                         cfg.plant.kernel, cfg.plant.feed)
print("predicted means (drug, mass, second):\n", np.round(pred.mean, 5))
print("predicted variances:\n", pred.variance)

summaries = {}
for controller in ("smpc", "nmpc"):
    records, summaries[controller] = run_campaign(paper_preset(controller, runs=4))
    rec = records[0]
    print(f"\n{controller}: first run")
    for t, u, c, r in zip(rec.times, rec.s_f, rec.c_f, rec.ratios):
        print(f"  t={t:4.0f} s_f={u:.4f} C_f={c:.3f} drug={r[0]:.4f} mass={r[1]:.4f} M02/M00={r[2]:.4f}")

report = compare(summaries["smpc"], summaries["nmpc"])
print("\nfinal-time drug mean:", report["a"]["drug_mean"], "vs", report["b"]["drug_mean"])
print("variance ratio SMPC/NMPC:", report["drug_var_ratio_a_over_b"])
print("max violation frequency:", report["max_violation_frequency"])

# Without noise the plant settles at a fixed point; the mean mass tends to
# 1/m00* because the mass density relaxes to c_f p_f = 1.
quiet = paper_preset("nmpc", runs=1, total_time=30.0, noise=NoiseSpec(0.0))
_, s = run_campaign(quiet)
print(f"\nnoise-free NMPC at t=30: drug {s.drug_mean:.5f}, mass {s.mass_mean:.6f}")
