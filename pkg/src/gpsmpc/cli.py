"""``race`` command-line front end: validate, run and sweep scenarios.

Exit codes: 0 success, 1 run failure (numerical or I/O), 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import SWEEPABLE, ConfigError, config_from_dict, config_hash, load_config
from .sim import RunResult, run_scenario
from .traces import format_summary, format_trace, run_summary

EXIT_OK, EXIT_RUN_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _simulate(tree: dict, seed: int) -> RunResult:
    cfg = config_from_dict(tree)
    try:
        return run_scenario(cfg, seed)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return RunResult(seed=seed, error=f"{type(exc).__name__}: {exc}")


def _run_job(tree: dict, seed: int, want_trace: bool):
    """Worker entry point: returns the per-seed summary and, optionally, the trace text."""
    cfg = config_from_dict(tree)
    result = _simulate(tree, seed)
    trace = format_trace(result, cfg.N, config_hash(cfg)) if want_trace else None
    return run_summary(result), trace


def run_batch(jobs, workers: int | None = None):
    """Execute ``(tree, seed, want_trace)`` jobs on a bounded pool, preserving job order."""
    jobs = list(jobs)
    workers = max(1, min(workers or os.cpu_count() or 1, len(jobs) or 1))
    if workers == 1:
        return [_run_job(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_job, *job) for job in jobs]
        return [f.result() for f in futures]


def _parse_seeds(text: str, count_form: bool) -> list[int]:
    try:
        if count_form and "," not in text:
            n = int(text)
            if n < 1:
                raise ValueError
            return list(range(n))
        seeds = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"invalid seed list '{text}'") from None
    if not seeds or any(s < 0 for s in seeds):
        raise UsageError(f"invalid seed list '{text}'")
    return seeds


def _prepare_out(out: str) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".race_write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write to output directory {path}: {exc.strerror}") from None
    return path


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: ok (scenario '{cfg['name']}', config hash {config_hash(cfg)})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = _parse_seeds(args.seeds, count_form=False) if args.seeds else cfg["seeds"]
    out = _prepare_out(args.out)
    results = run_batch([(cfg.tree, s, True) for s in seeds], args.workers)
    for seed, (_, trace) in zip(seeds, results):
        _write(out / f"trace_{seed}.csv", trace)
    runs = [summary for summary, _ in results]
    _write(out / "summary.json", format_summary(cfg["name"], config_hash(cfg), runs))
    for r in runs:
        print(f"seed {r['seed']}: success={r['overtake_success']} collision={r['collision']} "
              f"min_gap={r['min_gap']:.3f} infeasible={r['infeasible_cycles']}"
              + (f" error={r['error']}" if r["error"] else ""))
    return EXIT_RUN_FAILURE if any(r["error"] for r in runs) else EXIT_OK


def _parse_values(param: str, text: str) -> list:
    raw = [v.strip() for v in text.split(",") if v.strip()]
    if not raw:
        raise UsageError("--values must list at least one value")
    kind = int if param == "M" else float
    try:
        return [kind(v) for v in raw]
    except ValueError:
        raise UsageError(f"invalid value list '{text}' for {param}") from None


def sweep_table(param: str, values, seeds, runs) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([param, "seed", "success", "min_gap", "infeasible_cycles"])
    i = 0
    for value in values:
        for seed in seeds:
            r = runs[i]
            i += 1
            gap = "" if r["min_gap"] is None else format(r["min_gap"], ".17g")
            writer.writerow([value, seed, int(r["overtake_success"]), gap, r["infeasible_cycles"]])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    if args.param not in SWEEPABLE:
        raise UsageError(f"unknown parameter '{args.param}'; sweepable: {', '.join(sorted(SWEEPABLE))}")
    cfg = load_config(args.config)
    values = _parse_values(args.param, args.values)
    seeds = _parse_seeds(args.seeds, count_form=True)
    trees = [cfg.with_value(args.param, v).tree for v in values]   # validates every value
    out = _prepare_out(args.out)
    jobs = [(tree, s, False) for tree in trees for s in seeds]
    runs = [summary for summary, _ in run_batch(jobs, args.workers)]
    _write(out / "sweep.csv", sweep_table(args.param, values, seeds, runs))
    for j, value in enumerate(values):
        chunk = runs[j * len(seeds):(j + 1) * len(seeds)]
        gaps = np.array([r["min_gap"] for r in chunk if r["min_gap"] is not None])
        mean = gaps.mean() if len(gaps) else float("nan")
        se = gaps.std(ddof=1) / np.sqrt(len(gaps)) if len(gaps) > 1 else float("nan")
        ok = sum(r["overtake_success"] for r in chunk)
        print(f"{args.param}={value}: success {ok}/{len(chunk)}, mean min_gap {mean:.4f} (se {se:.4f})")
    return EXIT_RUN_FAILURE if any(r["error"] for r in runs) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="race", description="GP-SMPC overtaking simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a scenario config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario for one or more seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", help="comma-separated seeds (default: the config's seed list)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter sweep over values x seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help=f"one of: {', '.join(sorted(SWEEPABLE))}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", required=True, help="seed count n (seeds 0..n-1) or a comma-separated list")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse reports usage errors with status 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"race: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"race: error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
