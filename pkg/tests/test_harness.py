import json
import subprocess
import sys

import pytest

from moeplace.cli import main
from moeplace.harness import (
    RESULTS_SCHEMA,
    run_sweep,
    write_placement_csv,
)
from moeplace.scenario import scenario_from_dict

TINY = {
    "name": "tiny",
    "num_servers": 2,
    "num_users": 3,
    "workload": {"num_tokens": 16, "local_budget": 1},
    "models": [
        {"model_id": "a", "num_moe_layers": 1, "experts_per_layer": 5,
         "top_k": 1, "expert_bytes": 1e8, "embedding_bytes": 1024, "expert_flops": 1e7},
        {"model_id": "b", "num_moe_layers": 1, "experts_per_layer": 4,
         "top_k": 2, "expert_bytes": 2e8, "embedding_bytes": 2048, "expert_flops": 4e7},
    ],
    "algorithms": ["greedy", "dp", "accel", "lfu", "random"],
    "sweep_values": [3e8, 6e8],
    "seeds": [0, 1],
    "workload": {"num_tokens": 16, "local_budget": 1, "models_per_user": 2},
}


def tiny_scenario():
    return scenario_from_dict(json.loads(json.dumps(TINY)))


class TestRunSweep:
    def test_row_counting(self, tmp_path):
        sc = tiny_scenario()
        rows = run_sweep(sc, out_dir=tmp_path)
        assert len(rows) == len(sc.sweep_values) * len(sc.algorithms) * len(sc.seeds)
        assert all(not r.error for r in rows)
        assert (tmp_path / "results.csv").exists()
        assert (tmp_path / "runtimes.csv").exists()
        assert (tmp_path / "summary.json").exists()

    def test_results_csv_is_deterministic(self, tmp_path):
        sc = tiny_scenario()
        run_sweep(sc, out_dir=tmp_path / "a")
        run_sweep(sc, out_dir=tmp_path / "b")
        assert (tmp_path / "a/results.csv").read_bytes() == (
            tmp_path / "b/results.csv"
        ).read_bytes()

    def test_schema_header(self, tmp_path):
        run_sweep(tiny_scenario(), out_dir=tmp_path)
        first = (tmp_path / "results.csv").read_text().splitlines()[0]
        assert first == f"# schema: {RESULTS_SCHEMA}"

    def test_curvature_fields_on_decomposition_rows(self, tmp_path):
        rows = run_sweep(tiny_scenario(), out_dir=tmp_path)
        for r in rows:
            if r.algorithm in ("dp", "accel"):
                assert r.kappa_max is not None
                assert r.kappa_bound == pytest.approx((1 - r.kappa_max) / 2)
            else:
                assert r.kappa_max is None

    def test_error_rows_do_not_stop_the_sweep(self):
        data = dict(TINY, algorithms=["brute", "lfu"],
                    sweep_values=[5e8], seeds=[0])
        data["workload"] = {"num_tokens": 64, "local_budget": 0, "models_per_user": 2}
        sc = scenario_from_dict(data)
        # The brute-force search cap is tiny, so its rows fail while lfu rows
        # still complete.
        import moeplace.harness as harness
        rows = run_sweep(sc)
        brute_rows = [r for r in rows if r.algorithm == "brute"]
        lfu_rows = [r for r in rows if r.algorithm == "lfu"]
        assert all(not r.error for r in lfu_rows)
        assert len(brute_rows) == 1

    def test_placements_satisfy_capacity(self, tmp_path):
        sc = tiny_scenario()
        rows = run_sweep(sc)
        assert all(r.placement is not None for r in rows)


class TestPlacementCsv:
    def test_columns(self, tmp_path):
        from moeplace.latency import LatencyModel
        from moeplace.placement import lfu_placement
        from moeplace.scenario import build_instance

        inst = build_instance(tiny_scenario(), 0)
        placement = lfu_placement(inst)
        path = tmp_path / "placement.csv"
        write_placement_csv(placement, inst, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "server_id,model,layer,expert_index"
        assert len(lines) == 1 + placement.total_cached()


class TestCli:
    def scenario_file(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(TINY))
        return path

    def test_solve(self, tmp_path, capsys):
        path = self.scenario_file(tmp_path)
        out = tmp_path / "out"
        code = main(["solve", "--scenario", str(path), "--algorithm", "accel",
                     "--seed", "1", "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["algorithm"] == "accel"
        assert summary["avg_latency_s"] > 0
        assert (out / "placement.csv").exists()

    def test_sweep(self, tmp_path, capsys):
        path = self.scenario_file(tmp_path)
        out = tmp_path / "out"
        assert main(["sweep", "--scenario", str(path), "--out", str(out)]) == 0
        assert (out / "results.csv").exists()

    def test_curvature(self, tmp_path, capsys):
        path = self.scenario_file(tmp_path)
        assert main(["curvature", "--scenario", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert "kappa_max" in payload and "implied_bound" in payload

    def test_out_dir_env_override(self, tmp_path, monkeypatch, capsys):
        path = self.scenario_file(tmp_path)
        env_out = tmp_path / "from-env"
        monkeypatch.setenv("MOEPLACE_OUT", str(env_out))
        assert main(["solve", "--scenario", str(path), "--algorithm", "lfu",
                     "--seed", "0", "--out", str(tmp_path / "ignored")]) == 0
        assert (env_out / "summary.json").exists()
        assert not (tmp_path / "ignored").exists()

    def test_invalid_scenario_exits_nonzero(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"server": {"capacity_bytes": -5}}))
        assert main(["solve", "--scenario", str(path), "--algorithm", "lfu",
                     "--seed", "0", "--out", str(tmp_path / "o")]) == 2

    def test_module_entry_point(self, tmp_path):
        path = self.scenario_file(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "moeplace", "curvature", "--scenario", str(path)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "kappa_max" in proc.stdout
