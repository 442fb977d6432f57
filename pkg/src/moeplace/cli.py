"""Command-line entry point: solve, sweep, verify, curvature."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .estimators import ALGORITHM_NAMES
from .harness import (
    ResultRow,
    run_algorithm,
    run_sweep,
    write_placement_csv,
)
from .latency import LatencyModel
from .placement import curvature_report
from .scenario import Scenario, build_instance, load_scenario
from .verification import verify_suite


def _out_dir(args) -> Path:
    # The environment variable overrides the output directory only.
    env = os.environ.get("MOEPLACE_OUT")
    out = Path(env) if env else Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(args) -> Scenario:
    if args.scenario is None:
        return Scenario()
    return load_scenario(args.scenario)


def cmd_solve(args) -> int:
    scenario = _scenario(args)
    out = _out_dir(args)
    instance = build_instance(scenario, args.seed)
    model = LatencyModel(instance)
    placement, runtime, extras = run_algorithm(
        args.algorithm, instance, model, args.seed,
        report_curvature=scenario.report_curvature,
    )
    placement.validate(instance)
    write_placement_csv(placement, instance, out / "placement.csv")
    summary = {
        "scenario": scenario.name,
        "algorithm": args.algorithm,
        "seed": args.seed,
        "objective_f_s": model.objective(placement),
        "avg_latency_s": model.average_latency(placement),
        "cloud_only_latency_s": model.max_average_latency(),
        "cached_experts": placement.total_cached(),
        "runtime_s": runtime,
        "used_heuristic_routing": model.used_heuristic_routing,
        **extras,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_sweep(args) -> int:
    scenario = _scenario(args)
    out = _out_dir(args)
    rows = run_sweep(scenario, out_dir=out)
    errors = sum(1 for r in rows if r.error)
    print(f"{len(rows)} rows -> {out / 'results.csv'} ({errors} error rows)")
    return 0 if errors == 0 else 1


def cmd_verify(args) -> int:
    scenario = _scenario(args)
    report = verify_suite(scenario, quick=not args.full)
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def cmd_curvature(args) -> int:
    scenario = _scenario(args)
    instance = build_instance(scenario, args.seed)
    report = curvature_report(instance, solver="dp")
    payload = {
        "per_server": {str(k): v for k, v in sorted(report.per_server.items())},
        "kappa_max": report.kappa_max,
        "closed_form_estimate": report.closed_form,
        "closed_form_diagnostic": report.closed_form_diagnostic,
        "implied_bound": report.implied_bound,
    }
    print(json.dumps(payload, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moeplace",
        description="Expert placement on storage-constrained edge servers for "
        "low-latency mixture-of-experts inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one algorithm on one scenario draw")
    p.add_argument("--scenario", help="scenario JSON (omit for defaults)")
    p.add_argument("--algorithm", required=True, choices=ALGORITHM_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run the scenario's sweep grid")
    p.add_argument("--scenario", help="scenario JSON (omit for defaults)")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the property-check suite")
    p.add_argument("--scenario", help="scenario JSON (unused sizes come from the checks)")
    p.add_argument("--full", action="store_true", help="larger check sizes")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("curvature", help="empirical and closed-form curvature report")
    p.add_argument("--scenario", help="scenario JSON (omit for defaults)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_curvature)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
