"""Experiment sweeps: build instances, run algorithms, emit CSV/JSON results.

``results.csv`` is byte-deterministic for fixed seeds (it carries no wall
clock); measured runtimes go to ``runtimes.csv`` and ``summary.json``.
Instances are cached per (sweep value, seed) so every algorithm sees the
identical draw.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .estimators import ALGORITHM_NAMES
from .instance import Instance, Placement
from .latency import LatencyModel
from .placement import (
    ClosedFormCurvature,
    brute_force_optimal,
    curvature_closed_form,
    greedy_k1,
    lfu_placement,
    random_placement,
    successive_placement,
)
from .scenario import Scenario, apply_sweep, build_instance

__all__ = [
    "RESULTS_SCHEMA",
    "ResultRow",
    "run_algorithm",
    "run_sweep",
    "write_results_csv",
    "write_runtimes_csv",
    "write_placement_csv",
]

RESULTS_SCHEMA = "moeplace-results/1"
RESULTS_COLUMNS = (
    "sweep_axis",
    "sweep_value",
    "algorithm",
    "seed",
    "objective_f_s",
    "avg_latency_s",
    "cached_experts",
    "kappa_max",
    "kappa_closed_form",
    "kappa_bound",
    "error",
)
RUNTIME_COLUMNS = ("sweep_axis", "sweep_value", "algorithm", "seed", "runtime_s")


@dataclass
class ResultRow:
    sweep_axis: str
    sweep_value: float
    algorithm: str
    seed: int
    objective_f_s: float | None = None
    avg_latency_s: float | None = None
    runtime_s: float | None = None
    cached_experts: int | None = None
    kappa_max: float | None = None
    kappa_closed_form: float | None = None
    kappa_bound: float | None = None
    error: str = ""
    placement: Placement | None = None


def run_algorithm(
    name: str,
    instance: Instance,
    model: LatencyModel,
    seed: int,
    report_curvature: bool = False,
) -> tuple[Placement, float, dict]:
    """Run one algorithm on a prebuilt instance; returns (placement,
    runtime_seconds, extras). Curvature extras only apply to dp/accel."""
    extras: dict = {}
    start = time.perf_counter()
    if name == "greedy":
        placement = greedy_k1(instance, model=model).placement
    elif name in ("dp", "accel"):
        run = successive_placement(
            instance, solver=name, compute_curvature=report_curvature, model=model
        )
        placement = run.placement
        if report_curvature:
            kappas = [r.kappa for r in run.records if r.kappa is not None]
            extras["kappa_max"] = max(kappas) if kappas else 0.0
            extras["kappa_bound"] = (1.0 - extras["kappa_max"]) / 2.0
    elif name == "lfu":
        placement = lfu_placement(instance)
    elif name == "random":
        placement = random_placement(instance, seed)
    elif name == "brute":
        placement, _ = brute_force_optimal(instance, model=model)
    else:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {ALGORITHM_NAMES}")
    runtime = time.perf_counter() - start
    return placement, runtime, extras


def run_sweep(scenario: Scenario, out_dir=None) -> list[ResultRow]:
    """Run every (sweep value, algorithm, seed) cell; failures become error
    rows and the sweep continues. Writes results.csv, runtimes.csv, and
    summary.json when ``out_dir`` is given."""
    rows: list[ResultRow] = []
    used_heuristic = False
    for value in scenario.sweep_values:
        cell_scenario = apply_sweep(scenario, scenario.sweep_axis, value)
        for seed in scenario.seeds:
            try:
                instance = build_instance(cell_scenario, seed)
                model = LatencyModel(instance)
                closed_form = (
                    curvature_closed_form(instance)
                    if scenario.report_curvature and len(instance.servers) >= 2
                    else ClosedFormCurvature(None, "skipped")
                )
            except Exception as exc:
                for name in scenario.algorithms:
                    rows.append(
                        ResultRow(scenario.sweep_axis, value, name, seed, error=str(exc))
                    )
                continue
            for name in scenario.algorithms:
                row = ResultRow(scenario.sweep_axis, value, name, seed)
                try:
                    placement, runtime, extras = run_algorithm(
                        name, instance, model, seed,
                        report_curvature=scenario.report_curvature,
                    )
                    placement.validate(instance)
                    row.placement = placement
                    row.runtime_s = runtime
                    row.objective_f_s = model.objective(placement)
                    row.avg_latency_s = model.average_latency(placement)
                    row.cached_experts = placement.total_cached()
                    if "kappa_max" in extras:
                        row.kappa_max = extras["kappa_max"]
                        row.kappa_bound = extras["kappa_bound"]
                        row.kappa_closed_form = closed_form.value
                except Exception as exc:
                    row.error = str(exc)
                rows.append(row)
            used_heuristic = used_heuristic or model.used_heuristic_routing
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(rows, out / "results.csv")
        write_runtimes_csv(rows, out / "runtimes.csv")
        summary = {
            "scenario": scenario.name,
            "sweep_axis": scenario.sweep_axis,
            "sweep_values": list(scenario.sweep_values),
            "algorithms": list(scenario.algorithms),
            "seeds": list(scenario.seeds),
            "rows": len(rows),
            "errors": sum(1 for r in rows if r.error),
            "used_heuristic_routing": used_heuristic,
            "total_runtime_s": sum(r.runtime_s or 0.0 for r in rows),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(rows: list[ResultRow], path) -> None:
    buf = io.StringIO()
    buf.write(f"# schema: {RESULTS_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULTS_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r.sweep_axis,
                _fmt(float(r.sweep_value)),
                r.algorithm,
                r.seed,
                _fmt(r.objective_f_s),
                _fmt(r.avg_latency_s),
                _fmt(r.cached_experts),
                _fmt(r.kappa_max),
                _fmt(r.kappa_closed_form),
                _fmt(r.kappa_bound),
                r.error,
            ]
        )
    Path(path).write_text(buf.getvalue())


def write_runtimes_csv(rows: list[ResultRow], path) -> None:
    buf = io.StringIO()
    buf.write(f"# schema: {RESULTS_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RUNTIME_COLUMNS)
    for r in rows:
        writer.writerow(
            [r.sweep_axis, _fmt(float(r.sweep_value)), r.algorithm, r.seed, _fmt(r.runtime_s)]
        )
    Path(path).write_text(buf.getvalue())


def write_placement_csv(placement: Placement, instance: Instance, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["server_id", "model", "layer", "expert_index"])
    for n, experts in placement.as_expert_ids(instance.catalog).items():
        for e in experts:
            writer.writerow([n, e.model, e.layer, e.index])
    Path(path).write_text(buf.getvalue())
