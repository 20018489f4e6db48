"""Closed-loop Monte Carlo campaigns and PCE-versus-Monte-Carlo validation."""
from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from .controller import (QUANTITIES, ControlConfig, NoiseSpec, nmpc_step,
                         prediction_surrogates, smpc_step)
from .moments import (M00, PAPER_X0, FeedSpec, KernelSpec, MomentState, feed_moment_array,
                      integrate, propagate, summary_array)
from .pce import PceModel

log = logging.getLogger(__name__)

CONTROLLERS = ("smpc", "nmpc")


@dataclass(frozen=True)
class PlantConfig:
    k0: float = 0.06
    alpha: float = 0.5
    c_f: float = 1.0
    p_f: float = 1.0
    s_f: float = 0.1
    x0: tuple = tuple(PAPER_X0.as_array().tolist())

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.k0)

    @property
    def feed(self) -> FeedSpec:
        return FeedSpec(self.alpha, self.c_f, self.p_f, self.s_f)

    @property
    def initial_state(self) -> MomentState:
        return MomentState.from_array(self.x0)


@dataclass(frozen=True)
class CampaignConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    control: ControlConfig = field(default_factory=ControlConfig)
    controller: str = "smpc"
    runs: int = 100
    total_time: float = 15.0
    seed: int = 20190101
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        self.n_steps  # validates the time grid

    @property
    def n_steps(self) -> int:
        n = round(self.total_time / self.control.sample_time)
        if n < 0 or abs(n * self.control.sample_time - self.total_time) > 1e-9:
            raise ValueError("total_time must be a multiple of the sample time")
        return int(n)

    def run_seeds(self) -> list[int]:
        ss = np.random.SeedSequence(self.seed)
        return [int(v) for v in ss.generate_state(self.runs, dtype=np.uint64)]

    def replace(self, **changes) -> "CampaignConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        d = dict(d)
        plant = dict(d.pop("plant", {}))
        if "x0" in plant:
            plant["x0"] = tuple(plant["x0"])
        return cls(plant=PlantConfig(**plant), noise=NoiseSpec(**d.pop("noise", {})),
                   control=ControlConfig(**d.pop("control", {})), **d)

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def paper_preset(controller: str = "smpc", **changes) -> CampaignConfig:
    """Closed-loop campaign defaults: 100 runs, T=15, dT=1, noise std 0.1 on C_f."""
    return CampaignConfig(controller=controller).replace(**changes)


PRESETS = {"paper": paper_preset}


@dataclass
class RunRecord:
    seed: int
    times: np.ndarray    # (K+1,)
    s_f: np.ndarray      # (K+1,) move applied on [t_k, t_k+1); NaN on the last row
    c_f: np.ndarray      # (K+1,) realized feed concentration on the same interval
    states: np.ndarray   # (K+1, 9)
    diagnostics: list = field(default_factory=list, repr=False)

    @property
    def ratios(self) -> np.ndarray:
        return summary_array(self.states)


class RunFailed(RuntimeError):
    def __init__(self, seed: int, step: int, cause: BaseException):
        super().__init__(f"run with seed {seed} failed at step {step}: {cause}")
        self.seed = seed
        self.step = step


def run_closed_loop(config: CampaignConfig, seed: int) -> RunRecord:
    """One closed-loop trajectory: move from the true state, then draw this period's noise."""
    plant, ctrl, noise = config.plant, config.control, config.noise
    kernel, feed = plant.kernel, plant.feed
    rng = np.random.default_rng(seed)
    n = config.n_steps
    x = plant.initial_state
    states = np.empty((n + 1, 9))
    states[0] = x.as_array()
    s_f = np.full(n + 1, np.nan)
    c_f = np.full(n + 1, np.nan)
    diags = []
    warm = None
    for k in range(n):
        try:
            if config.controller == "smpc":
                u, diag = smpc_step(x, ctrl, noise, kernel, feed, warm)
            else:
                u, diag = nmpc_step(x, ctrl, kernel, feed, warm)
            # Noise is drawn only after the move is committed.
            c = plant.c_f + noise.mean + noise.std * rng.standard_normal()
            traj = integrate(x, FeedSpec(plant.alpha, c, plant.p_f, u), kernel,
                             ctrl.dt, ctrl.sample_time)
        except Exception as exc:
            raise RunFailed(seed, k, exc) from exc
        warm = diag.sequence
        diags.append(diag)
        s_f[k], c_f[k] = u, c
        x = traj.final
        states[k + 1] = x.as_array()
    times = ctrl.sample_time * np.arange(n + 1)
    return RunRecord(seed, times, s_f, c_f, states, diags)


@dataclass
class CampaignSummary:
    controller: str
    n_runs: int
    n_failed: int
    final_time: float
    drug_mean: float
    drug_var: float | None
    mass_mean: float
    mass_var: float | None
    degenerate: bool
    violation_frequency: list   # per step after each move, fraction outside [p1*, p2*]
    drug_hist: dict = field(default_factory=dict)
    mass_hist: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _histogram(values: np.ndarray, bins: int) -> dict:
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        lo, hi = lo - 0.5e-6 * max(1.0, abs(lo)), hi + 0.5e-6 * max(1.0, abs(hi))
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def summarize(records: list[RunRecord], config: CampaignConfig, failures=(), bins: int = 20
              ) -> CampaignSummary:
    if not records:
        raise ValueError("no successful runs to summarize")
    ratios = np.stack([r.ratios for r in records])  # (runs, K+1, 3)
    final = ratios[:, -1]
    n = len(records)
    degenerate = n < 2
    second = ratios[:, 1:, 2]
    ctrl = config.control
    violated = (second < ctrl.var_lower) | (second > ctrl.var_upper)
    return CampaignSummary(
        controller=config.controller, n_runs=n, n_failed=len(failures),
        final_time=float(records[0].times[-1]),
        drug_mean=float(final[:, 0].mean()),
        drug_var=None if degenerate else float(final[:, 0].var(ddof=1)),
        mass_mean=float(final[:, 1].mean()),
        mass_var=None if degenerate else float(final[:, 1].var(ddof=1)),
        degenerate=degenerate,
        violation_frequency=violated.mean(axis=0).tolist(),
        drug_hist=_histogram(final[:, 0], bins), mass_hist=_histogram(final[:, 1], bins),
        failures=[str(f) for f in failures],
    )


def _run_safe(args):
    config, seed = args
    try:
        return run_closed_loop(config, seed)
    except RunFailed as exc:
        return exc


def run_campaign(config: CampaignConfig, progress=None):
    """Run every replicate and summarize; failed runs are reported, not fatal.

    Returns ``(records, summary)``. With ``config.out_dir`` set, trajectories,
    diagnostics and the summary are written there.
    """
    jobs = [(config, s) for s in config.run_seeds()]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_safe, jobs))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_run_safe(job))
            if progress:
                progress(i + 1, len(jobs))
    records = [r for r in results if isinstance(r, RunRecord)]
    failures = [r for r in results if not isinstance(r, RunRecord)]
    for f in failures:
        log.warning("%s", f)
    summary = summarize(records, config, failures)
    if config.out_dir:
        from .export import write_campaign
        write_campaign(config.out_dir, config, records, summary)
    return records, summary


def compare(a: CampaignSummary | dict, b: CampaignSummary | dict) -> dict:
    """Side-by-side report of two campaign summaries (typically SMPC vs NMPC)."""
    a = a.to_dict() if isinstance(a, CampaignSummary) else a
    b = b.to_dict() if isinstance(b, CampaignSummary) else b

    def ratio(x, y):
        return None if x is None or y in (None, 0) else x / y

    return {
        "a": {k: a[k] for k in ("controller", "n_runs", "drug_mean", "drug_var", "mass_mean", "mass_var")},
        "b": {k: b[k] for k in ("controller", "n_runs", "drug_mean", "drug_var", "mass_mean", "mass_var")},
        "drug_var_ratio_a_over_b": ratio(a["drug_var"], b["drug_var"]),
        "mass_var_ratio_a_over_b": ratio(a["mass_var"], b["mass_var"]),
        "max_violation_frequency": {"a": max(a["violation_frequency"], default=0.0),
                                    "b": max(b["violation_frequency"], default=0.0)},
    }


@dataclass(frozen=True)
class ValidationConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    noise_std: float = 0.1
    sample_time: float = 0.25
    steps: int = 3
    samples: int = 10_000
    pce_nodes: int = 6
    pce_degree: int = 2
    pce_scheme: str = "tensor"
    quantity: str = "mass_mean"
    dt: float = 0.01
    seed: int = 7
    bins: int = 40


def direct_monte_carlo(x0: MomentState, controls, c_f_samples: np.ndarray, plant: PlantConfig,
                       dt: float, sample_time: float) -> np.ndarray:
    """Ratios after each period for sampled feed concentrations of shape (S, K); returns (S, K, 3)."""
    rows = np.repeat(x0.as_array()[None], len(c_f_samples), axis=0)
    out = np.empty(c_f_samples.shape + (3,))
    for k, u in enumerate(controls):
        fm = feed_moment_array(c_f_samples[:, k], plant.p_f, u)
        rows = propagate(rows, fm, plant.alpha, plant.k0, dt, sample_time)
        if not np.all(rows[:, M00] > 0):
            raise ValueError(f"empty population in direct Monte Carlo at step {k + 1}")
        out[:, k] = summary_array(rows)
    return out


def pce_validation(config: ValidationConfig = ValidationConfig()) -> dict:
    """Compare chaos surrogates of one ratio with direct Monte Carlo at each step."""
    q = QUANTITIES.index(config.quantity)
    plant = config.plant
    ctrl = ControlConfig(horizon=config.steps, sample_time=config.sample_time, dt=config.dt,
                         pce_nodes=config.pce_nodes, pce_degree=config.pce_degree,
                         pce_scheme=config.pce_scheme)
    controls = np.full(config.steps, plant.s_f)
    mc_rng, pce_rng = (np.random.default_rng(s) for s in
                       np.random.SeedSequence(config.seed).spawn(2))

    w = mc_rng.standard_normal((config.samples, config.steps))
    mc = direct_monte_carlo(plant.initial_state, controls, plant.c_f + config.noise_std * w,
                            plant, config.dt, config.sample_time)[:, :, q]
    surrogates = prediction_surrogates(plant.initial_state, controls, NoiseSpec(config.noise_std),
                                       ctrl, plant.kernel, plant.feed)
    steps = []
    for k, (basis, coef) in enumerate(surrogates):
        model = PceModel(basis, coef[:, q])
        sur = model.sample(pce_rng, config.samples)
        x = mc[:, k]
        lo, hi = min(x.min(), sur.min()), max(x.max(), sur.max())
        if lo == hi:
            lo, hi = lo - 1e-9, hi + 1e-9
        edges = np.linspace(lo, hi, config.bins + 1)
        steps.append({
            "step": k + 1,
            "time": (k + 1) * config.sample_time,
            "mc_mean": float(x.mean()),
            "mc_var": float(x.var(ddof=1)),
            "mc_se": float(x.std(ddof=1) / np.sqrt(len(x))),
            "pce_mean": model.mean(),
            "pce_var": model.variance(),
            "surrogate_sample_mean": float(sur.mean()),
            "surrogate_sample_var": float(sur.var(ddof=1)),
            "ks": float(ks_2samp(x, sur).statistic),
            "hist_edges": edges.tolist(),
            "mc_hist": np.histogram(x, edges)[0].tolist(),
            "pce_hist": np.histogram(sur, edges)[0].tolist(),
            "coefficients": model.coefficients.tolist(),
        })
    return {"quantity": config.quantity, "noise_std": config.noise_std,
            "samples": config.samples, "steps": steps}

