"""Trace CSV and summary JSON writers, plus the trace reader.

A trace file starts with ``#``-prefixed metadata lines (config hash, tool
version, seed), followed by the mandatory header row and one row per step.
Floats are written with 17 significant digits so they round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .sim import RunResult, StepRecord
from .vehicle import EvInput, EvState, TvState

EV_FIELDS = ("s", "d", "phi", "v")
TV_FIELDS = ("x", "vx", "y", "vy")


def trace_columns(N: int) -> list[str]:
    """Fixed column order of a trace with horizon ``N``."""
    cols = ["step", "time", "ev_s", "ev_d", "ev_phi", "ev_v", "u_a", "u_delta",
            "tv_x", "tv_vx", "tv_y", "tv_vy", "status", "case", "gp_size", "tv_commit", "gap"]
    cols += [f"pred_mean_{k}_{f}" for k in range(1, N + 1) for f in TV_FIELDS]
    cols += [f"pred_var_{k}_{f}" for k in range(1, N + 1) for f in TV_FIELDS]
    cols += [f"plan_{k}_{f}" for k in range(N + 1) for f in EV_FIELDS]
    return cols


def _f(x) -> str:
    return format(float(x), ".17g")


def _row(rec: StepRecord) -> list[str]:
    row = [str(rec.step), _f(rec.time)]
    row += [_f(v) for v in rec.ev.array()]
    row += [_f(v) for v in rec.u.array()]
    row += [_f(v) for v in rec.tv.array()]
    row += [rec.status, rec.case, str(rec.gp_size), rec.tv_commit, _f(rec.gap)]
    row += [_f(v) for v in np.ravel(rec.pred_means)]
    row += [_f(v) for v in np.ravel(rec.pred_vars)]
    row += [_f(v) for v in np.ravel(rec.plan)]
    return row


def format_trace(result: RunResult, N: int, config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash: {config_hash}\n")
    buf.write(f"# version: {__version__}\n")
    buf.write(f"# seed: {result.seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_columns(N))
    for rec in result.records:
        writer.writerow(_row(rec))
    return buf.getvalue()


def write_trace(path, result: RunResult, N: int, config_hash: str) -> Path:
    path = Path(path)
    path.write_text(format_trace(result, N, config_hash))
    return path


def read_trace(path) -> tuple[dict, list[StepRecord]]:
    """Parse a trace file back into its metadata and step records."""
    meta, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            else:
                body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    N = sum(1 for c in header if c.startswith("pred_mean_") and c.endswith("_x"))
    if header != trace_columns(N):
        raise ValueError(f"{path}: unexpected trace header")
    records = []
    for row in reader:
        r = dict(zip(header, row))
        num = lambda cols: np.array([float(r[c]) for c in cols])  # noqa: E731
        records.append(StepRecord(
            step=int(r["step"]),
            time=float(r["time"]),
            ev=EvState.from_array(num([f"ev_{f}" for f in EV_FIELDS])),
            u=EvInput.from_array(num(["u_a", "u_delta"])),
            tv=TvState.from_array(num([f"tv_{f}" for f in TV_FIELDS])),
            status=r["status"],
            case=r["case"],
            gp_size=int(r["gp_size"]),
            tv_commit=r["tv_commit"],
            gap=float(r["gap"]),
            pred_means=num([f"pred_mean_{k}_{f}" for k in range(1, N + 1) for f in TV_FIELDS]).reshape(N, 4),
            pred_vars=num([f"pred_var_{k}_{f}" for k in range(1, N + 1) for f in TV_FIELDS]).reshape(N, 4),
            plan=num([f"plan_{k}_{f}" for k in range(N + 1) for f in EV_FIELDS]).reshape(N + 1, 4),
        ))
    return meta, records


def _jsonable(value):
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if np.isfinite(value) else None
    return value


def run_summary(result: RunResult) -> dict:
    out = {k: _jsonable(v) for k, v in result.summary().items()}
    out["final_ev"] = None if result.final_ev is None else result.final_ev.array().tolist()
    out["final_tv"] = None if result.final_tv is None else result.final_tv.array().tolist()
    return out


def aggregate(runs: list[dict]) -> dict:
    n = len(runs)
    gaps = [r["min_gap"] for r in runs if r["min_gap"] is not None]
    return {
        "runs": n,
        "success_rate": sum(r["overtake_success"] for r in runs) / n if n else 0.0,
        "collisions": sum(r["collision"] for r in runs),
        "side_switches": sum(r["side_switch"] for r in runs),
        "mean_min_gap": float(np.mean(gaps)) if gaps else None,
        "infeasible_cycles": {str(r["seed"]): r["infeasible_cycles"] for r in runs},
        "total_infeasible_cycles": sum(r["infeasible_cycles"] for r in runs),
        "failed_runs": [r["seed"] for r in runs if r["error"]],
    }


def format_summary(name: str, config_hash: str, runs: list[dict]) -> str:
    doc = {
        "scenario": name,
        "config_hash": config_hash,
        "version": __version__,
        "runs": runs,
        "aggregate": aggregate(runs),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
