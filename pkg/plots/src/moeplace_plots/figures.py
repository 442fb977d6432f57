"""Comparison figures from sweep result CSVs.

Consumes the results CSV emitted by the moeplace harness (schema line
``# schema: moeplace-results/1`` followed by a header row) and renders one
line chart per figure spec: x = swept value, one line per algorithm,
y aggregated over seeds. Rendering is deterministic: fixed styles, fixed
canvas, no timestamps, so re-rendering an identical CSV reproduces the
image bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

__all__ = ["SCHEMA", "FigureSpec", "FIGSETS", "load_results", "render"]

SCHEMA = "moeplace-results/1"

# Stable per-algorithm style so figures do not depend on row order.
_STYLE = {
    "accel": ("tab:blue", "o"),
    "dp": ("tab:cyan", "v"),
    "greedy": ("tab:orange", "s"),
    "lfu": ("tab:green", "^"),
    "random": ("tab:red", "d"),
}
_FALLBACK_COLORS = ["tab:purple", "tab:brown", "tab:pink", "tab:gray", "tab:olive"]


@dataclass(frozen=True)
class FigureSpec:
    name: str
    sweep_axis: str
    y: str = "avg_latency_s"
    x: str = "sweep_value"
    group: str = "algorithm"
    agg: str = "mean"
    xlabel: str = ""
    ylabel: str = "average latency (s)"
    xscale: float = 1.0  # multiply x values for display, e.g. 1e-9 for GB

    def validate(self):
        if self.agg != "mean":
            raise ValueError(f"{self.name}: unsupported aggregation {self.agg!r}")


LATENCY_FIGSET = (
    FigureSpec("latency_vs_server_capacity", "server_capacity",
               xlabel="server storage capacity (GB)", xscale=1e-9),
    FigureSpec("latency_vs_local_budget", "local_budget",
               xlabel="experts cached per user"),
    FigureSpec("latency_vs_models_per_user", "models_per_user",
               xlabel="models requested per user"),
    FigureSpec("latency_vs_user_bandwidth", "user_bandwidth",
               xlabel="user bandwidth (MHz)", xscale=1e-6),
    FigureSpec("latency_vs_num_servers", "num_servers",
               xlabel="number of edge servers"),
)

RUNTIME_FIGSET = (
    FigureSpec("runtime_vs_server_capacity", "server_capacity", y="runtime_s",
               xlabel="server storage capacity (GB)", xscale=1e-9,
               ylabel="algorithm runtime (s)"),
    FigureSpec("runtime_vs_num_servers", "num_servers", y="runtime_s",
               xlabel="number of edge servers", ylabel="algorithm runtime (s)"),
    FigureSpec("runtime_vs_num_users", "num_users", y="runtime_s",
               xlabel="number of users", ylabel="algorithm runtime (s)"),
)

FIGSETS = {"latency": LATENCY_FIGSET, "runtime": RUNTIME_FIGSET}


def load_figset(name_or_path: str) -> tuple[FigureSpec, ...]:
    """A named figset, or a JSON file holding a list of spec objects."""
    if name_or_path in FIGSETS:
        return FIGSETS[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise ValueError(
            f"unknown figset {name_or_path!r}; expected one of {sorted(FIGSETS)} or a JSON file"
        )
    entries = json.loads(path.read_text())
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"{path}: figset file must hold a non-empty JSON list")
    return tuple(FigureSpec(**e) for e in entries)


def load_results(csv_path) -> pd.DataFrame:
    """Read a results CSV, enforcing the schema version."""
    csv_path = Path(csv_path)
    with open(csv_path) as f:
        first = f.readline().strip()
    if first != f"# schema: {SCHEMA}":
        raise ValueError(
            f"{csv_path}: expected schema line '# schema: {SCHEMA}', got {first!r}"
        )
    df = pd.read_csv(csv_path, skiprows=1)
    if df.empty:
        raise ValueError(f"{csv_path}: no data rows")
    if "error" in df.columns:
        df = df[df["error"].isna() | (df["error"] == "")]
    if df.empty:
        raise ValueError(f"{csv_path}: only error rows present")
    return df


def _style_for(algorithm: str, index: int):
    if algorithm in _STYLE:
        return _STYLE[algorithm]
    return _FALLBACK_COLORS[index % len(_FALLBACK_COLORS)], "x"


def render(csv_path, specs, out_dir) -> list[Path]:
    """Render one PNG per spec from a results CSV; returns written paths."""
    df = load_results(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for spec in specs:
        spec.validate()
        for col in ("sweep_axis", spec.x, spec.y, spec.group, "seed"):
            if col not in df.columns:
                raise ValueError(f"{spec.name}: column {col!r} missing from the CSV")
        sub = df[df["sweep_axis"] == spec.sweep_axis]
        if sub.empty:
            raise ValueError(
                f"{spec.name}: no rows with sweep_axis == {spec.sweep_axis!r}"
            )
        grouped = (
            sub.groupby([spec.group, spec.x], sort=True)[spec.y].mean().reset_index()
        )
        fig, ax = plt.subplots(figsize=(4.8, 3.6), dpi=150)
        for i, algorithm in enumerate(sorted(grouped[spec.group].unique())):
            line = grouped[grouped[spec.group] == algorithm]
            color, marker = _style_for(algorithm, i)
            ax.plot(
                line[spec.x] * spec.xscale,
                line[spec.y],
                label=algorithm,
                color=color,
                marker=marker,
                markersize=4,
                linewidth=1.4,
            )
        ax.set_xlabel(spec.xlabel or spec.x)
        ax.set_ylabel(spec.ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{spec.name}.png"
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written
