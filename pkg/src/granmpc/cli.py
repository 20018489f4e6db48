"""Command-line entry point: ``granmpc {simulate,oracle,pce-validate,campaign,compare}``.

On failure a JSON object ``{"error": ..., "message": ...}`` is printed to
stderr and the exit code is nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cnmc, export
from .harness import (PRESETS, CampaignConfig, ValidationConfig, compare, pce_validation,
                      run_campaign)
from .moments import FeedSpec, integrate, summary_array


def _campaign_config(args) -> CampaignConfig:
    if args.config:
        cfg = CampaignConfig.load(args.config)
    else:
        cfg = PRESETS[args.preset]()
    changes = {}
    if getattr(args, "controller", None):
        changes["controller"] = args.controller
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        changes["runs"] = args.runs
    if args.out:
        changes["out_dir"] = args.out
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    return cfg.replace(**changes)


def cmd_simulate(args):
    cfg = _campaign_config(args)
    plant = cfg.plant
    s_f = plant.s_f if args.s_f is None else args.s_f
    feed = FeedSpec(plant.alpha, plant.c_f, plant.p_f, s_f)
    traj = integrate(plant.initial_state, feed, plant.kernel, args.dt, args.t_end)
    every = max(1, round(args.every / args.dt))
    idx = np.arange(0, len(traj), every)
    ratios = summary_array(traj.states[idx])
    out = Path(args.out or ".") / "simulate.csv"
    export.write_rows(out, ("time", *export.NAMES, "drug_mean", "mass_mean", "drug_second"),
                      ([float(traj.times[i]), *map(float, traj.states[i]), *map(float, r)]
                       for i, r in zip(idx, ratios)))
    return {"output": str(out), "final": dict(zip(export.NAMES, traj.states[-1].tolist()))}


def cmd_oracle(args):
    cfg = _campaign_config(args)
    plant = cfg.plant
    seed = 0 if args.seed is None else args.seed
    ens = cnmc.init_monodisperse(args.n, args.p0, args.s0, args.c0)
    times = np.linspace(0.0, args.t_end, args.outputs)
    times, moments = cnmc.run_batch(ens, plant.kernel, args.t_end, np.random.default_rng(seed), times)
    out = Path(args.out or ".") / "oracle.csv"
    export.write_oracle_csv(out, times, moments, seed, args.n)
    return {"output": str(out), "events_time": ens.time}


def cmd_pce_validate(args):
    cfg = ValidationConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.samples:
        cfg = dataclasses.replace(cfg, samples=args.samples)
    report = pce_validation(cfg)
    out = export.write_validation(args.out or ".", report)
    return {"output": str(out), "ks": [s["ks"] for s in report["steps"]]}


def cmd_campaign(args):
    cfg = _campaign_config(args)
    if not cfg.out_dir:
        cfg = cfg.replace(out_dir=f"campaign_{cfg.controller}")

    def progress(i, n):
        print(f"run {i}/{n}", file=sys.stderr)

    _, summary = run_campaign(cfg, progress=progress if args.verbose else None)
    return {"output": cfg.out_dir, "drug_mean": summary.drug_mean, "drug_var": summary.drug_var,
            "n_failed": summary.n_failed}


def cmd_compare(args):
    report = compare(export.read_json(args.a), export.read_json(args.b))
    if args.out:
        export.write_json(Path(args.out) / "compare.json", report)
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="granmpc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="campaign JSON config")
        sp.add_argument("--preset", default="paper", choices=sorted(PRESETS))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("simulate", help="open-loop moment trajectory")
    common(sp)
    sp.add_argument("--t-end", type=float, default=15.0)
    sp.add_argument("--dt", type=float, default=0.01)
    sp.add_argument("--every", type=float, default=0.25, help="output spacing")
    sp.add_argument("--s-f", type=float)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle", help="constant-number Monte Carlo batch run")
    common(sp)
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--t-end", type=float, default=10.0)
    sp.add_argument("--outputs", type=int, default=11)
    sp.add_argument("--p0", type=float, default=1.0)
    sp.add_argument("--s0", type=float, default=0.1)
    sp.add_argument("--c0", type=float, default=1.0)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("pce-validate", help="chaos surrogate vs direct Monte Carlo")
    common(sp)
    sp.add_argument("--samples", type=int)
    sp.set_defaults(func=cmd_pce_validate)

    sp = sub.add_parser("campaign", help="closed-loop Monte Carlo campaign")
    common(sp)
    sp.add_argument("--controller", choices=["smpc", "nmpc"])
    sp.add_argument("--runs", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_campaign)

    sp = sub.add_parser("compare", help="join two campaign summaries")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    try:
        result = args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
