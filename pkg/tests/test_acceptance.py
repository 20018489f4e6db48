"""Acceptance criteria, each at its stated tolerance with one PASS/FAIL line.

Criterion 4 runs two 100-run closed-loop campaigns and takes roughly half an
hour on a single core; deselect it with ``-m "not slow"``.
"""
import time
from math import factorial

import numpy as np
import pytest

from granmpc.cnmc import init_monodisperse, run_batch
from granmpc.controller import (ControlConfig, NoiseSpec, build_predictions, chance_residuals,
                                smpc_objective, smpc_step)
from granmpc.harness import (PlantConfig, ValidationConfig, paper_preset, pce_validation,
                             run_campaign, run_closed_loop)
from granmpc.moments import NAMES, PAPER_X0, FeedSpec, KernelSpec, feed_moments, integrate
from granmpc.pce import gauss_rule, index_set, norm_sq, total_degree_count

K = KernelSpec(0.06)


def test_criterion_1_closure_vs_oracle(report):
    start = time.perf_counter()
    times = np.linspace(0.0, 10.0, 11)
    reps = np.array([run_batch(init_monodisperse(10_000, 1.0, 0.1, 1.0), K, 10.0,
                               np.random.default_rng(seed), times)[1] for seed in range(20)])
    model = integrate(feed_moments(FeedSpec(0.0, 1.0, 1.0, 0.1)), FeedSpec(0.0, 0.0, 1.0, 0.1),
                      K, 0.01, 10.0).states[::100]
    mean = reps.mean(axis=0)
    se = reps.std(axis=0, ddof=1) / np.sqrt(len(reps))
    # m10 and m01 are conserved exactly by each event, so their replicate SE is
    # zero; a relative roundoff floor keeps the comparison meaningful.
    tol = 3 * se + 1e-12 * np.abs(model)
    z_ok = np.abs(mean - model) <= tol
    m00_err = abs(mean[-1, 0] - 1 / 1.3) / (1 / 1.3)
    elapsed = time.perf_counter() - start
    worst = np.unravel_index(np.argmax(np.abs(mean - model) / tol), tol.shape)
    ok = bool(z_ok.all()) and m00_err <= 0.02 and elapsed < 120
    report("1 closure vs cNMC oracle", ok,
           f"{int(z_ok.sum())}/{z_ok.size} moment-time pairs within 3 SE "
           f"(worst {NAMES[worst[1]]} at t={times[worst[0]]:g}); "
           f"m00(10)={mean[-1, 0]:.5f} rel err {m00_err:.2e}; {elapsed:.1f}s")
    assert ok


def test_criterion_2_integrator_order(report):
    # With k0=0.06 the dt=0.02 error is already at roundoff; a stiffer kernel
    # exposes the truncation error on the same analytic law.
    k = KernelSpec(0.5)
    exact = 1.9 / (1 + 0.5 * 1.9 * 10.0 / 2)
    errs = [abs(integrate(PAPER_X0, FeedSpec(0.0, 0.0, 1.0, 0.1), k, dt, 10.0).final.m00 - exact)
            for dt in (0.02, 0.01)]
    ratio = errs[0] / errs[1]
    ok = 14 <= ratio <= 18
    report("2 RK4 order", ok, f"error ratio {ratio:.3f} (errors {errs[0]:.2e}, {errs[1]:.2e})")
    assert ok


def test_criterion_3_pce_validation(report):
    start = time.perf_counter()
    rep = pce_validation(ValidationConfig())
    elapsed = time.perf_counter() - start
    ok = elapsed < 60
    parts = []
    for s in rep["steps"]:
        mean_ok = abs(s["pce_mean"] - s["mc_mean"]) <= 3 * s["mc_se"]
        var_ok = abs(s["pce_var"] - s["mc_var"]) <= 0.1 * s["mc_var"]
        ks_ok = s["ks"] <= 0.05
        ok &= mean_ok and var_ok and ks_ok
        parts.append(f"step {s['step']}: |dmean|/SE={abs(s['pce_mean'] - s['mc_mean']) / s['mc_se']:.2f} "
                     f"dvar={abs(s['pce_var'] - s['mc_var']) / s['mc_var']:.3f} KS={s['ks']:.4f}")
    report("3 PCE vs direct MC", ok, "; ".join(parts) + f"; {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def campaigns(tmp_path_factory):
    out = tmp_path_factory.mktemp("campaigns")
    start = time.perf_counter()
    smpc, nmpc = (run_campaign(paper_preset(c, out_dir=str(out / c)))[1] for c in ("smpc", "nmpc"))
    return (smpc, nmpc), time.perf_counter() - start


@pytest.mark.slow
def test_criterion_4a_variance_ratio(campaigns, report):
    (s, n), elapsed = campaigns
    ratio = s.drug_var / n.drug_var
    ok = s.drug_var <= n.drug_var / 10
    report("4a SMPC Var <= NMPC Var / 10", ok,
           f"Var[M01/M00](15) SMPC {s.drug_var:.3e}, NMPC {n.drug_var:.3e}, ratio {ratio:.3f}; "
           f"campaigns {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_4b_smpc_mean(campaigns, report):
    (s, n), _ = campaigns
    ok = abs(s.drug_mean - 0.2) <= 0.02
    report("4b |SMPC mean - 0.2| <= 0.02", ok,
           f"SMPC mean {s.drug_mean:.5f} (NMPC {n.drug_mean:.5f}); failed runs {s.n_failed}")
    assert ok


@pytest.mark.slow
def test_criterion_4c_violation_frequency(campaigns, report):
    (s, n), elapsed = campaigns
    se = np.sqrt(0.15 * 0.85 / s.n_runs)
    worst = max(s.violation_frequency)
    ok = worst <= 0.15 + 2 * se and elapsed < 30 * 60
    report("4c SMPC per-step violation frequency", ok,
           f"max {worst:.2f} vs bound {0.15 + 2 * se:.4f} (NMPC max {max(n.violation_frequency):.2f}); "
           f"campaigns {elapsed / 60:.1f} min")
    assert ok


def test_criterion_5_degeneracy(report):
    start = time.perf_counter()
    quiet = NoiseSpec(0.0)
    ctrl = ControlConfig(variance_weight=0.0)
    moves = {c: run_closed_loop(paper_preset(c, runs=1, noise=quiet, control=ctrl), 0).s_f[:-1]
             for c in ("smpc", "nmpc")}
    gap = float(np.max(np.abs(moves["smpc"] - moves["nmpc"])))
    elapsed = time.perf_counter() - start
    ok = gap <= 1e-3 and len(moves["smpc"]) == 15 and elapsed < 60
    report("5 SMPC/NMPC degeneracy", ok, f"max move gap {gap:.2e} over 15 steps; {elapsed:.1f}s")
    assert ok


def test_criterion_6_pce_units(report):
    x, w = gauss_rule("hermite", 6)
    exact = [0.0 if k % 2 else float(np.prod(np.arange(k - 1, 0, -2))) for k in range(12)]
    mono = max(abs(np.sum(w * x ** k) - e) for k, e in enumerate(exact))
    norms_ok = all(norm_sq("hermite", d) == factorial(d) for d in range(7))
    l_td = len(index_set(3, "total_degree", 2))
    l_t = len(index_set(3, "tensor", 2))
    ok = mono <= 1e-10 and norms_ok and l_td == 10 == total_degree_count(3, 2) and l_t == 27
    report("6 PCE units", ok, f"max monomial error {mono:.1e}; norms d! {norms_ok}; "
           f"L(3,2)={l_td}; tensor count {l_t}")
    assert ok


def random_states(seed):
    """States reached by the plant under random constant feeds and horizons."""
    rng = np.random.default_rng(seed)
    plant = PlantConfig()
    while True:
        feed = FeedSpec(plant.alpha, rng.uniform(0.8, 1.2), 1.0, rng.uniform(0.05, 0.4))
        t = rng.integers(1, 16)
        yield integrate(plant.initial_state, feed, plant.kernel, 0.01, float(t)).final


def test_criterion_7_optimizer_oracle(report):
    start = time.perf_counter()
    plant = PlantConfig()
    cfg = ControlConfig(horizon=1)
    noise = NoiseSpec(0.1)
    grid = np.round(np.arange(0.0, 1.0 + 5e-4, 1e-3), 12)
    gaps, skipped = [], 0
    for x in random_states(2024):
        stats = [build_predictions(x, [u], noise, cfg, plant.kernel, plant.feed) for u in grid]
        f = np.array([smpc_objective(s, cfg) for s in stats])
        feasible = np.array([np.all(chance_residuals(s, cfg) <= 0) for s in stats])
        if not feasible.any():
            # No admissible move exists; the controller takes its soft fallback.
            skipped += 1
            continue
        best = grid[feasible][np.argmin(f[feasible])]
        u, _ = smpc_step(x, cfg, noise, plant.kernel, plant.feed)
        gaps.append(abs(u - best))
        if len(gaps) == 10:
            break
    elapsed = time.perf_counter() - start
    ok = max(gaps) <= 2e-3 and elapsed < 300
    report("7 optimizer vs grid search", ok,
           f"max |u - u_grid| {max(gaps):.2e} over 10 feasible states "
           f"({skipped} infeasible draws skipped); {elapsed:.1f}s")
    assert ok
