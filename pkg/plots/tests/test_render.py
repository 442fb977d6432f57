"""Rendering tests against the golden results fixture.

The golden CSV was produced by concatenating one small harness sweep per
axis (see tests/data/golden_results.csv, schema moeplace-results/1); it is
the only coupling to the solver package.
"""
import json
from pathlib import Path

import pytest

from moeplace_plots.cli import main
from moeplace_plots.figures import (
    FIGSETS,
    LATENCY_FIGSET,
    FigureSpec,
    load_figset,
    load_results,
    render,
)

GOLDEN = Path(__file__).parent / "data" / "golden_results.csv"


def report(name, passed, detail=""):
    line = f"ACCEPTANCE {name}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line)


class TestLoadResults:
    def test_golden_loads(self):
        df = load_results(GOLDEN)
        assert {"sweep_axis", "sweep_value", "algorithm", "seed", "avg_latency_s"} <= set(
            df.columns
        )
        assert len(df) == 140

    def test_schema_mismatch_rejected(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("# schema: moeplace-results/999\na,b\n1,2\n")
        with pytest.raises(ValueError, match="schema"):
            load_results(path)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("# schema: moeplace-results/1\nsweep_axis,sweep_value\n")
        with pytest.raises(ValueError, match="no data"):
            load_results(path)


class TestRender:
    def test_all_five_latency_figures_render(self, tmp_path):
        written = render(GOLDEN, LATENCY_FIGSET, tmp_path)
        passed = len(written) == 5 and all(p.exists() and p.stat().st_size > 0 for p in written)
        report("plot-rendering", passed, f"{len(written)} figures from the golden CSV")
        assert passed
        assert sorted(p.name for p in written) == sorted(
            f"{s.name}.png" for s in LATENCY_FIGSET
        )

    def test_rendering_is_byte_identical(self, tmp_path):
        a = render(GOLDEN, LATENCY_FIGSET, tmp_path / "a")
        b = render(GOLDEN, LATENCY_FIGSET, tmp_path / "b")
        same = all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
        report("plot-determinism", same, "re-render byte-identical")
        assert same

    def test_missing_column_is_an_error(self, tmp_path):
        spec = FigureSpec("bogus", "server_capacity", y="does_not_exist")
        with pytest.raises(ValueError, match="does_not_exist"):
            render(GOLDEN, [spec], tmp_path)

    def test_empty_after_filter_is_an_error(self, tmp_path):
        spec = FigureSpec("bogus", "phase_of_moon")
        with pytest.raises(ValueError, match="no rows"):
            render(GOLDEN, [spec], tmp_path)

    def test_unsupported_aggregation(self, tmp_path):
        spec = FigureSpec("bogus", "server_capacity", agg="median")
        with pytest.raises(ValueError, match="aggregation"):
            render(GOLDEN, [spec], tmp_path)


class TestFigsets:
    def test_named_figsets(self):
        assert len(load_figset("latency")) == 5
        assert all(s.y == "runtime_s" for s in load_figset("runtime"))

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="figset"):
            load_figset("art-deco")

    def test_json_figset_file(self, tmp_path):
        path = tmp_path / "custom.json"
        path.write_text(
            json.dumps(
                [{"name": "objective_vs_capacity", "sweep_axis": "server_capacity",
                  "y": "objective_f_s", "ylabel": "latency reduction (s)"}]
            )
        )
        specs = load_figset(str(path))
        assert specs[0].y == "objective_f_s"

    def test_bad_figset_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{}")
        with pytest.raises(ValueError, match="list"):
            load_figset(str(path))


class TestCli:
    def test_renders_default_figset(self, tmp_path, capsys):
        code = main(["--csv", str(GOLDEN), "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 5

    def test_bad_inputs_exit_nonzero(self, tmp_path, capsys):
        assert main(["--csv", str(GOLDEN), "--figset", "nope", "--out", str(tmp_path)]) == 2
        missing = tmp_path / "missing.csv"
        assert main(["--csv", str(missing), "--out", str(tmp_path)]) == 2
