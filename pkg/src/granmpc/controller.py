"""Receding-horizon controllers for the granulator: chance-constrained SMPC and nominal NMPC.

Both controllers manipulate the feed drug content ``s_f`` and see the full
moment state. The SMPC propagates Gaussian feed-concentration noise through
the moment model with a Hermite chaos expansion per horizon step: step ``k``
depends on the ``k`` independent draws ``w_1..w_k``, so its surrogate lives on
a ``k``-dimensional tensor grid.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .moments import (M00, FeedSpec, KernelSpec, MomentState, feed_moment_array, propagate,
                      summary_array)
from .optimizer import InfeasibleProblem, NlpProblem, minimize
from .pce import BasisSet, default_grid, gauss_rule, index_set

log = logging.getLogger(__name__)

QUANTITIES = ("drug_mean", "mass_mean", "drug_second")
DRUG, MASS, SECOND = range(3)
MODES = ("paper_literal", "cantelli")
# Constraints are tightened by the solver's feasibility tolerance so an accepted
# move satisfies the untightened residuals exactly rather than to within 1e-6.
FEAS_TOL = 1e-6


class DegeneratePrediction(ValueError):
    def __init__(self, step: int, node: int):
        super().__init__(f"m00 <= 0 at horizon step {step}, quadrature node {node}")
        self.step = step
        self.node = node


@dataclass(frozen=True)
class ControlConfig:
    target_drug: float = 0.2
    target_mass: float = 1.2
    variance_weight: float = 100.0
    epsilon: float = 0.85
    var_lower: float = 0.0
    var_upper: float = 0.06
    horizon: int = 3
    sample_time: float = 1.0
    u_min: float = 0.0
    u_max: float | None = None  # defaults to the feed particle mass p_f
    mode: str = "paper_literal"
    terminal_only: bool = False
    free_moves: int | None = None  # move blocking: later moves repeat the last free one
    dt: float = 0.01
    pce_nodes: int = 6
    pce_degree: int = 2
    pce_scheme: str = "tensor"
    xatol: float = 1e-6

    def __post_init__(self):
        if not self.var_lower < self.var_upper:
            raise ValueError("need var_lower < var_upper")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.sample_time > 0:
            raise ValueError("sample_time must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.free_moves is not None and not 1 <= self.free_moves <= self.horizon:
            raise ValueError("free_moves must lie in [1, horizon]")

    @property
    def n_free(self) -> int:
        return self.free_moves or self.horizon

    def control_bounds(self, feed: FeedSpec) -> tuple[float, float]:
        hi = feed.p_f if self.u_max is None else min(self.u_max, feed.p_f)
        return self.u_min, hi

    def expand(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        return np.concatenate([u, np.full(self.horizon - len(u), u[-1])])


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian perturbation of the feed concentration, independent per sample period."""

    std: float = 0.1
    mean: float = 0.0
    measurement_std: float = 0.0  # declared for completeness; full-state feedback ignores it

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError("noise std must be >= 0")


@dataclass(frozen=True)
class PredictionStats:
    mean: np.ndarray      # (N, 3): drug_mean, mass_mean, drug_second per step
    variance: np.ndarray  # (N, 3)

    @property
    def horizon(self) -> int:
        return len(self.mean)


def kappa(epsilon: float) -> float:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    return float(np.sqrt(epsilon / (1.0 - epsilon)))


@lru_cache(maxsize=32)
def _projector(k: int, nodes: int, degree: int, scheme: str):
    """Basis, 1-D Gauss nodes and the (L, Q) node-to-coefficient map."""
    basis = index_set(k, scheme, degree, "hermite")
    grid = default_grid(basis, nodes)
    phi = basis.evaluate(grid.points)
    proj = (phi * grid.weights[:, None]).T / basis.norms[:, None]
    proj.setflags(write=False)
    return basis, gauss_rule("hermite", nodes)[0], proj


def _nominal_predictions(x: np.ndarray, controls, c_f: float, feed: FeedSpec,
                         kernel: KernelSpec, config: ControlConfig) -> np.ndarray:
    means = np.empty((len(controls), 3))
    for k, u in enumerate(controls):
        fm = feed_moment_array(c_f, feed.p_f, u)
        x = propagate(x, fm, feed.alpha, kernel.k0, config.dt, config.sample_time)
        if not x[M00] > 0:  # also catches NaN from a diverging step
            raise DegeneratePrediction(k + 1, 0)
        means[k] = summary_array(x)
    return means


def prediction_surrogates(state: MomentState, controls, noise: NoiseSpec, config: ControlConfig,
                          kernel: KernelSpec, feed: FeedSpec) -> list[tuple[BasisSet, np.ndarray]]:
    """Per horizon step, the Hermite basis and the (L, 3) coefficients of the ratios.

    Step ``k`` integrates the model from every node of the ``k``-dimensional
    Gauss-Hermite grid, with ``c_f = c_f0 + mean + std * w_j`` during period
    ``j``. Grid nodes share their first ``k - 1`` periods with step ``k - 1``,
    so each period is integrated once per distinct noise history.
    """
    controls = np.asarray(controls, dtype=float).reshape(-1)
    c_nominal = feed.c_f + noise.mean
    rows = state.as_array()[None, :]
    out = []
    for k in range(1, len(controls) + 1):
        basis, nodes, proj = _projector(k, config.pce_nodes, config.pce_degree, config.pce_scheme)
        # Newest noise coordinate varies fastest, matching the tensor grid order.
        n_hist = len(rows)
        rows = np.repeat(rows, len(nodes), axis=0)
        c_f = c_nominal + noise.std * np.tile(nodes, n_hist)
        fm = feed_moment_array(c_f, feed.p_f, controls[k - 1])
        rows = propagate(rows, fm, feed.alpha, kernel.k0, config.dt, config.sample_time)
        bad = np.flatnonzero(~(rows[:, M00] > 0))
        if bad.size:
            raise DegeneratePrediction(k, int(bad[0]))
        out.append((basis, proj @ summary_array(rows)))
    return out


def build_predictions(state: MomentState, controls, noise: NoiseSpec, config: ControlConfig,
                      kernel: KernelSpec, feed: FeedSpec) -> PredictionStats:
    """Mean and variance of the monitored ratios at each horizon step.

    With zero noise the nominal trajectory is returned directly with zero
    variances; otherwise the moments of the chaos surrogates are used.
    """
    controls = np.asarray(controls, dtype=float).reshape(-1)
    if noise.std == 0:
        means = _nominal_predictions(state.as_array(), controls, feed.c_f + noise.mean,
                                     feed, kernel, config)
        return PredictionStats(means, np.zeros_like(means))
    means = np.empty((len(controls), 3))
    var = np.empty((len(controls), 3))
    for k, (basis, coef) in enumerate(prediction_surrogates(state, controls, noise, config,
                                                            kernel, feed)):
        means[k] = coef[0]
        var[k] = (coef[1:] ** 2 * basis.norms[1:, None]).sum(axis=0)
    return PredictionStats(means, var)


def chance_residuals(stats: PredictionStats, config: ControlConfig) -> np.ndarray:
    """(N, 2) array of lower/upper bound residuals for M02/M00; <= 0 is satisfied.

    ``paper_literal`` tightens by ``kappa * Var``; ``cantelli`` by
    ``kappa * std``, which is the one-sided Cantelli bound.
    """
    e = stats.mean[:, SECOND]
    v = stats.variance[:, SECOND]
    spread = v if config.mode == "paper_literal" else np.sqrt(np.maximum(v, 0.0))
    k = kappa(config.epsilon)
    return np.column_stack([k * spread - e + config.var_lower, k * spread + e - config.var_upper])


def _stage_weights(config: ControlConfig, n: int) -> np.ndarray:
    w = np.ones(n)
    if config.terminal_only:
        w[:-1] = 0.0
    return w


def nmpc_objective(stats: PredictionStats, config: ControlConfig) -> float:
    m = stats.mean
    stage = (m[:, DRUG] - config.target_drug) ** 2 + (m[:, MASS] - config.target_mass) ** 2
    return float(stage @ _stage_weights(config, len(m)))


def smpc_objective(stats: PredictionStats, config: ControlConfig) -> float:
    m, v = stats.mean, stats.variance
    stage = ((m[:, DRUG] - config.target_drug) ** 2 + (m[:, MASS] - config.target_mass) ** 2
             + config.variance_weight * v[:, DRUG])
    return float(stage @ _stage_weights(config, len(m)))


@dataclass
class StepDiagnostics:
    move: float
    sequence: list
    objective: float
    residuals: list
    means: list
    variances: list
    iterations: int
    evaluations: int
    infeasible: bool
    max_residual: float
    controller: str = "smpc"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


def _starts(config: ControlConfig, lo: float, hi: float, warm_start):
    n = config.n_free
    starts = []
    if warm_start is not None:
        ws = np.atleast_1d(np.asarray(warm_start, dtype=float))
        shifted = np.concatenate([ws[1:], ws[-1:]]) if len(ws) > 1 else ws
        starts.append(np.resize(shifted, n))
    starts += [np.full(n, 0.5 * (lo + hi)), np.full(n, lo), np.full(n, hi)]
    unique = []
    for s in starts:
        s = np.clip(s, lo, hi)
        if not any(np.array_equal(s, t) for t in unique):
            unique.append(s)
    return unique


def _solve(name, predict, objective, state, config, feed, warm_start):
    lo, hi = config.control_bounds(feed)
    cache: dict[bytes, PredictionStats] = {}

    def stats_of(u):
        key = np.asarray(u, dtype=float).tobytes()
        if key not in cache:
            cache[key] = predict(config.expand(u))
        return cache[key]

    problem = NlpProblem(
        objective=lambda u: objective(stats_of(u), config),
        bounds=[(lo, hi)] * config.n_free,
        constraints=lambda u: chance_residuals(stats_of(u), config).ravel() + FEAS_TOL,
    )
    infeasible = False
    try:
        sol = minimize(problem, _starts(config, lo, hi, warm_start), xatol=config.xatol,
                       feas_tol=FEAS_TOL)
    except InfeasibleProblem as exc:
        sol = exc.solution
        infeasible = True
        log.warning("%s: constraints infeasible at state m00=%.4g, residual %.3g; "
                    "applying least-violating move", name, state.m00, sol.max_residual)
    seq = config.expand(sol.x)
    stats = stats_of(sol.x)
    diag = StepDiagnostics(
        move=float(seq[0]), sequence=seq.tolist(), objective=sol.fun,
        residuals=chance_residuals(stats, config).tolist(), means=stats.mean.tolist(),
        variances=stats.variance.tolist(), iterations=sol.iterations,
        evaluations=sol.evaluations, infeasible=infeasible, max_residual=sol.max_residual,
        controller=name)
    return float(seq[0]), diag


def smpc_step(state: MomentState, config: ControlConfig, noise: NoiseSpec, kernel: KernelSpec,
              feed: FeedSpec, warm_start=None) -> tuple[float, StepDiagnostics]:
    """First move of the chance-constrained stochastic MPC problem."""
    return _solve("smpc", lambda u: build_predictions(state, u, noise, config, kernel, feed),
                  smpc_objective, state, config, feed, warm_start)


def nmpc_step(state: MomentState, config: ControlConfig, kernel: KernelSpec, feed: FeedSpec,
              warm_start=None) -> tuple[float, StepDiagnostics]:
    """First move of the nominal MPC problem with hard bounds on M02/M00."""
    quiet = NoiseSpec(std=0.0)
    return _solve("nmpc", lambda u: build_predictions(state, u, quiet, config, kernel, feed),
                  nmpc_objective, state, config, feed, warm_start)
