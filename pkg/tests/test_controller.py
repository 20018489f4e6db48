import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from granmpc.controller import (ControlConfig, DegeneratePrediction, NoiseSpec, PredictionStats,
                                build_predictions, chance_residuals, kappa, nmpc_objective,
                                nmpc_step, prediction_surrogates, smpc_objective, smpc_step)
from granmpc.harness import PlantConfig, direct_monte_carlo
from granmpc.moments import PAPER_X0, FeedSpec, KernelSpec, MomentState, integrate, summary
from granmpc.pce import PceModel

PLANT = PlantConfig()
K, FEED = PLANT.kernel, PLANT.feed
QUIET = NoiseSpec(std=0.0)


def stats(mean_second, var_second, n=1):
    mean = np.tile([0.2, 1.2, mean_second], (n, 1))
    var = np.tile([0.0, 0.0, var_second], (n, 1))
    return PredictionStats(mean, var)


# kappa / residuals / objectives

def test_kappa_values():
    assert kappa(0.85) == pytest.approx(2.380476, abs=5e-7)
    assert kappa(0.5) == 1.0
    assert kappa(1e-12) < 1e-5
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            kappa(bad)


def test_residuals_interior():
    r = chance_residuals(stats(0.03, 0.0), ControlConfig())
    np.testing.assert_allclose(r, [[-0.03, -0.03]])


def test_residuals_cantelli():
    r = chance_residuals(stats(0.03, 2.5e-5), ControlConfig(mode="cantelli"))
    assert r[0, 1] == pytest.approx(2.380476 * 0.005 + 0.03 - 0.06, abs=1e-9)
    assert r[0, 1] == pytest.approx(-0.0181, abs=1e-4)


def test_residuals_paper_literal_uses_variance():
    r = chance_residuals(stats(0.03, 2.5e-5), ControlConfig())
    assert r[0, 1] == pytest.approx(kappa(0.85) * 2.5e-5 + 0.03 - 0.06)


def test_residuals_violated():
    assert chance_residuals(stats(0.07, 0.0), ControlConfig())[0, 1] == pytest.approx(0.01)


def test_objective_values():
    cfg = ControlConfig()
    assert smpc_objective(stats(0.03, 0.0, 3), cfg) == 0.0
    s = PredictionStats(np.array([[0.25, 1.2, 0.03]]), np.array([[1e-4, 0.0, 0.0]]))
    assert smpc_objective(s, cfg) == pytest.approx(0.0125)


def test_objective_sums_steps_or_terminal():
    m = np.array([[0.3, 1.2, 0.03], [0.25, 1.2, 0.03]])
    s = PredictionStats(m, np.zeros_like(m))
    assert nmpc_objective(s, ControlConfig()) == pytest.approx(0.01 + 0.0025)
    assert nmpc_objective(s, ControlConfig(terminal_only=True)) == pytest.approx(0.0025)


@pytest.mark.parametrize("kwargs", [dict(var_lower=0.1, var_upper=0.05), dict(epsilon=1.0),
                                    dict(horizon=0), dict(sample_time=0.0), dict(mode="x"),
                                    dict(free_moves=4)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ControlConfig(**kwargs)


# predictions

def test_zero_noise_predictions_equal_plant():
    cfg = ControlConfig()
    u = [0.1, 0.3, 0.2]
    p = build_predictions(PAPER_X0, u, QUIET, cfg, K, FEED)
    x = PAPER_X0
    for k, s in enumerate(u):
        x = integrate(x, FEED.with_drug(s), K, cfg.dt, cfg.sample_time).final
        np.testing.assert_array_equal(p.mean[k], summary(x))
    assert np.all(p.variance == 0)


def test_prediction_variances_nonnegative_and_growing():
    p = build_predictions(PAPER_X0, [0.2] * 3, NoiseSpec(0.1), ControlConfig(), K, FEED)
    assert np.all(p.variance >= 0)
    assert p.variance[2, 1] > p.variance[0, 1]


def test_tiny_noise_approaches_nominal():
    cfg = ControlConfig()
    a = build_predictions(PAPER_X0, [0.2] * 3, NoiseSpec(1e-7), cfg, K, FEED)
    b = build_predictions(PAPER_X0, [0.2] * 3, QUIET, cfg, K, FEED)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-9)
    assert np.all(a.variance < 1e-12)


def test_one_step_surrogate_mean_matches_mc():
    cfg = ControlConfig(horizon=1)
    basis, coef = prediction_surrogates(PAPER_X0, [0.1], NoiseSpec(0.1), cfg, K, FEED)[0]
    c = 1.0 + 0.1 * np.random.default_rng(123).standard_normal((100_000, 1))
    mc = direct_monte_carlo(PAPER_X0, [0.1], c, PLANT, cfg.dt, cfg.sample_time)[:, 0, 1]
    se = mc.std(ddof=1) / np.sqrt(len(mc))
    assert abs(PceModel(basis, coef[:, 1]).mean() - mc.mean()) <= 3 * se


def test_degenerate_prediction_identifies_step():
    with pytest.raises(DegeneratePrediction) as info:
        build_predictions(PAPER_X0, [0.1] * 3, NoiseSpec(0.1), ControlConfig(),
                          KernelSpec(5000.0), FEED)
    assert info.value.step == 1


# monotone risk and Cantelli validity

@settings(max_examples=200)
@given(st.floats(-0.05, 0.1), st.floats(0, 1e-2), st.floats(0.01, 0.99), st.floats(0.01, 0.99),
       st.sampled_from(["paper_literal", "cantelli"]))
def test_monotone_risk(e, v, eps_a, eps_b, mode):
    lo, hi = sorted((eps_a, eps_b))
    s = stats(e, v)
    if np.all(chance_residuals(s, ControlConfig(epsilon=hi, mode=mode)) <= 0):
        assert np.all(chance_residuals(s, ControlConfig(epsilon=lo, mode=mode)) <= 0)


@settings(max_examples=300)
@given(st.floats(0.0, 0.06), st.floats(1e-10, 1e-3), st.floats(0.01, 0.99))
def test_cantelli_bounds_gaussian_tails(e, v, eps):
    cfg = ControlConfig(epsilon=eps, mode="cantelli")
    if np.all(chance_residuals(stats(e, v), cfg) <= 0):
        sd = np.sqrt(v)
        p_out = norm.cdf(cfg.var_lower, e, sd) + norm.sf(cfg.var_upper, e, sd)
        assert p_out <= 1 - eps + 1e-12


# controller steps

def steady_state(s_f):
    return integrate(PAPER_X0, FEED.with_drug(s_f), K, 0.01, 80.0).final


def test_fixed_point_move():
    # Oracle: grid search over constant policies of the steady-state tracking cost.
    cfg = ControlConfig()
    grid = np.round(np.arange(0, 1.0005, 1e-3), 12)
    root = (-0.5 + np.sqrt(0.25 + 0.06)) / 0.06
    drug = grid / root  # steady M01 = c_f s_f and M00 = root
    s_star = grid[np.argmin((drug - cfg.target_drug) ** 2)]
    x = steady_state(s_star)
    assert cfg.var_lower <= summary(x)[2] <= cfg.var_upper
    u, diag = smpc_step(x, cfg, QUIET, K, FEED, warm_start=[s_star] * 3)
    assert u == pytest.approx(s_star, abs=1e-3)
    assert not diag.infeasible


def test_degenerate_controllers_agree():
    cfg = ControlConfig(variance_weight=0.0)
    u_s, d_s = smpc_step(PAPER_X0, cfg, QUIET, K, FEED)
    u_n, d_n = nmpc_step(PAPER_X0, cfg, K, FEED)
    assert u_s == pytest.approx(u_n, abs=1e-3)
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = build_predictions(PAPER_X0, rng.uniform(0, 1, 3), QUIET, cfg, K, FEED)
        assert smpc_objective(p, cfg) == nmpc_objective(p, cfg)


def test_nmpc_infeasible_flag():
    x = MomentState(1.9, 2.0, 0.2, 0.5, 2.3, 0.5, 0.03, 0.3, 0.05)
    u, diag = nmpc_step(x, ControlConfig(), K, FEED)
    assert diag.infeasible and diag.max_residual > 0
    assert 0 <= u <= FEED.p_f


def test_move_blocking_and_diagnostics_json():
    cfg = ControlConfig(free_moves=1)
    u, diag = smpc_step(PAPER_X0, cfg, NoiseSpec(0.1), K, FEED)
    assert len(set(diag.sequence)) == 1 and len(diag.sequence) == 3
    assert '"move"' in diag.to_json()
    assert 0 <= u <= 1
