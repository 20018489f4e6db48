"""CSV/JSON export of trajectories, campaign summaries and histograms.

Floats are written with 17 significant digits so that reading a file back
reproduces the stored values bit for bit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .moments import NAMES

RUN_HEADER = ("time", "s_f", "c_f", *NAMES, "drug_mean", "mass_mean", "drug_second", "seed")
ORACLE_HEADER = ("time", *NAMES, "seed", "N")


def fmt(v) -> str:
    return format(float(v), ".17g")


def _open(path, mode="w"):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_rows(path, header, rows):
    with _open(path) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) if isinstance(v, float) else v
                        for v in row])


def write_run_csv(record, path) -> Path:
    ratios = record.ratios
    rows = []
    for k, t in enumerate(record.times):
        rows.append([float(t), float(record.s_f[k]), float(record.c_f[k]),
                     *map(float, record.states[k]), *map(float, ratios[k]), int(record.seed)])
    write_rows(path, RUN_HEADER, rows)
    return Path(path)


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns of a CSV written by this module, as float arrays keyed by header name."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [row for row in reader]
    cols = {}
    for j, name in enumerate(header):
        values = [row[j] for row in data]
        if name in ("seed", "N"):
            cols[name] = np.array([int(v) for v in values], dtype=np.uint64)
        else:
            cols[name] = np.array([float(v) for v in values])
    return cols


def write_oracle_csv(path, times, moments, seed: int, n: int) -> Path:
    write_rows(path, ORACLE_HEADER,
               ([float(t), *map(float, m), int(seed), int(n)] for t, m in zip(times, moments)))
    return Path(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_json(path, obj) -> Path:
    # json emits repr(float), the shortest string that round-trips exactly.
    with _open(path) as fh:
        json.dump(_jsonable(obj), fh, indent=2, allow_nan=True)
        fh.write("\n")
    return Path(path)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_summary_json(summary, path) -> Path:
    d = summary.to_dict() if hasattr(summary, "to_dict") else summary
    return write_json(path, d)


def write_histogram_csv(hist: dict, path, label: str = "count") -> Path:
    edges, counts = hist["edges"], hist["counts"]
    write_rows(path, ("bin_lo", "bin_hi", label),
               ([float(edges[i]), float(edges[i + 1]), int(c)] for i, c in enumerate(counts)))
    return Path(path)


def write_diagnostics(records, path) -> Path:
    """One JSON line per controller step, tagged with the run seed and step index."""
    with _open(path) as fh:
        for rec in records:
            for k, d in enumerate(rec.diagnostics):
                line = dict(d.__dict__, seed=int(rec.seed), step=k)
                fh.write(json.dumps(_jsonable(line)) + "\n")
    return Path(path)


def write_campaign(out_dir, config, records, summary) -> Path:
    out = Path(out_dir)
    runs = out / "runs"
    for i, rec in enumerate(records):
        write_run_csv(rec, runs / f"run_{i:03d}.csv")
    write_diagnostics(records, out / "diagnostics.jsonl")
    write_json(out / "config.json", config.to_dict())
    write_summary_json(summary, out / "summary.json")
    write_histogram_csv(summary.drug_hist, out / "hist_drug_mean.csv")
    write_histogram_csv(summary.mass_hist, out / "hist_mass_mean.csv")
    return out


def write_validation(out_dir, report: dict) -> Path:
    out = Path(out_dir)
    write_json(out / "pce_validation.json", report)
    for s in report["steps"]:
        e = s["hist_edges"]
        write_rows(out / f"pce_hist_step{s['step']}.csv", ("bin_lo", "bin_hi", "mc", "pce"),
                   ([float(e[i]), float(e[i + 1]), int(a), int(b)]
                    for i, (a, b) in enumerate(zip(s["mc_hist"], s["pce_hist"]))))
    return out

