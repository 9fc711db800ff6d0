import csv
import json
import subprocess
import sys

import pytest

from ppai import harness
from ppai.qagate import load_gate, write_training_file
from ppai.workload import synthetic_corpus


def cli(*args, env=None):
    return subprocess.run([sys.executable, "-m", "ppai.harness", *map(str, args)],
                          capture_output=True, text=True, env=env)


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


class TestSeeds:
    def test_parse(self):
        assert harness.parse_seeds("0-3") == [0, 1, 2, 3]
        assert harness.parse_seeds("5,1,2-3") == [5, 1, 2, 3]
        assert harness.parse_seeds(None) is None


class TestTrainGate:
    def test_synthetic_corpus(self, tmp_path, capsys):
        assert harness.main(["train-gate", "--out-dir", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        acc = float(out.split("held_out_accuracy=")[1].split()[0])
        assert acc >= 0.95
        gate = load_gate(tmp_path / "gate.json")
        assert gate.k == 8
        report = json.loads((tmp_path / "train_report.json").read_text())
        assert report["held_out_accuracy"] == pytest.approx(acc, abs=1e-4)
        assert "final_loss" in report

    def test_data_file_and_rerun_identical(self, tmp_path):
        data = tmp_path / "train.ndjson"
        write_training_file(data, synthetic_corpus(4, 30, seed=5))
        for name in ("a", "b"):
            assert harness.main(["train-gate", "--data", str(data), "--out-dir", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "gate.json").read_bytes() == (tmp_path / "b" / "gate.json").read_bytes()
        assert load_gate(tmp_path / "a" / "gate.json").k == 4

    def test_single_cluster_rejected(self, tmp_path):
        data = tmp_path / "k1.ndjson"
        write_training_file(data, [("alpha beta", [1.0]), ("gamma delta", [1.0]), ("eps zeta", [1.0])])
        proc = cli("train-gate", "--data", data, "--out-dir", tmp_path / "out")
        assert proc.returncode == 2
        assert "LabelDimensionMismatch" in proc.stderr

    def test_missing_file(self, tmp_path):
        proc = cli("train-gate", "--data", tmp_path / "nope.ndjson", "--out-dir", tmp_path)
        assert proc.returncode == 2 and "FileNotFoundError" in proc.stderr

    def test_parse_error(self, tmp_path):
        data = tmp_path / "bad.ndjson"
        data.write_text("{oops\n")
        proc = cli("train-gate", "--data", data, "--out-dir", tmp_path)
        assert proc.returncode == 2 and "ParseError" in proc.stderr

    def test_gate_config(self, tmp_path):
        cfg = write(tmp_path / "g.json", {"k": 3, "n_per_cluster": 20, "epochs": 5})
        assert harness.main(["train-gate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
        assert load_gate(tmp_path / "gate.json").k == 3
        bad = write(tmp_path / "bad.json", {"kk": 3})
        assert harness.main(["train-gate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2


class TestSimulate:
    def test_minimal_one_agent(self, tmp_path):
        cfg = write(tmp_path / "c.json", {"n_agents": 1, "duration": 2.0})
        assert harness.main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
        summary = json.loads((tmp_path / "o" / "run.summary.json").read_text())
        assert "avg_accuracy" in summary and "avg_process_time" in summary
        assert (tmp_path / "o" / "run.records.ndjson").exists()

    def test_eight_seeds_emit_means(self, tmp_path):
        cfg = write(tmp_path / "c.json", {"duration": 2.0})
        assert harness.main(["simulate", "--config", str(cfg), "--seeds", "0-7", "--out-dir", str(tmp_path)]) == 0
        mean = json.loads((tmp_path / "mean.summary.json").read_text())
        per = [json.loads((tmp_path / f"seed{s}.summary.json").read_text()) for s in range(8)]
        assert mean["runs"] == 8
        assert mean["avg_accuracy"] == pytest.approx(sum(p["avg_accuracy"] for p in per) / 8)

    def test_fewer_seeds_no_mean(self, tmp_path):
        cfg = write(tmp_path / "c.json", {"duration": 1.0})
        harness.main(["simulate", "--config", str(cfg), "--seeds", "0,1", "--out-dir", str(tmp_path)])
        assert not (tmp_path / "mean.summary.json").exists()

    def test_two_invocations_identical(self, tmp_path):
        cfg = write(tmp_path / "c.json", {"duration": 3.0})
        for name in ("a", "b"):
            harness.main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / name)])
        for f in ("run.summary.json", "run.records.ndjson"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_invalid_config(self, tmp_path):
        cfg = write(tmp_path / "c.json", {"n_agents": -1})
        proc = cli("simulate", "--config", cfg, "--out-dir", tmp_path)
        assert proc.returncode == 2 and "ConfigInvalid" in proc.stderr


class TestSweep:
    def spec(self, tmp_path, **kw):
        body = {"parameter": "beta", "values": [1e-3, 1e-5], "seeds": [1, 0],
                "base_config": {"duration": 2.0}}
        body.update(kw)
        return write(tmp_path / "spec.json", body)

    def test_csv_sorted_with_schema(self, tmp_path):
        assert harness.main(["sweep", "--spec", str(self.spec(tmp_path)), "--out-dir", str(tmp_path)]) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "# schema: ppai-sweep/1"
        rows = list(csv.DictReader(lines[1:]))
        keys = [(float(r["value"]), int(r["seed"])) for r in rows]
        assert keys == sorted(keys) == [(1e-5, 0), (1e-5, 1), (1e-3, 0), (1e-3, 1)]
        trends = json.loads((tmp_path / "trends.json").read_text())
        assert trends["parameter"] == "beta"
        assert set(trends["assertions"]) == {"process_time_non_increasing", "entropy_non_decreasing",
                                             "accuracy_non_increasing"}

    def test_single_value_matches_simulate(self, tmp_path):
        base = {"duration": 2.0, "seed": 4}
        spec = self.spec(tmp_path, parameter="arrival_lambda", values=[10.0], seeds=[4], base_config=base)
        harness.main(["sweep", "--spec", str(spec), "--out-dir", str(tmp_path / "sw")])
        cfg = write(tmp_path / "c.json", {**base, "arrival_rate_lambda": 10.0})
        harness.main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "sim")])
        assert (tmp_path / "sw" / "runs" / "v0_seed4.summary.json").read_bytes() == \
            (tmp_path / "sim" / "run.summary.json").read_bytes()

    def test_parallel_equals_serial(self, tmp_path):
        spec = str(self.spec(tmp_path))
        harness.main(["sweep", "--spec", spec, "--out-dir", str(tmp_path / "s1")])
        harness.main(["sweep", "--spec", spec, "--workers", "2", "--out-dir", str(tmp_path / "s2")])
        for f in ("sweep.csv", "trends.json"):
            assert (tmp_path / "s1" / f).read_bytes() == (tmp_path / "s2" / f).read_bytes()

    @pytest.mark.parametrize("param,values", [("n_agents", [2, 3]), ("churn_rate", [0.0, 1.0])])
    def test_other_parameters(self, tmp_path, param, values):
        spec = self.spec(tmp_path, parameter=param, values=values, seeds=[0])
        assert harness.main(["sweep", "--spec", str(spec), "--out-dir", str(tmp_path)]) == 0
        rows = list(csv.DictReader((tmp_path / "sweep.csv").read_text().splitlines()[1:]))
        assert len(rows) == 2

    @pytest.mark.parametrize("body", [
        {"parameter": "gamma", "values": [1], "seeds": [0]},
        {"parameter": "beta", "values": [], "seeds": [0]},
        {"parameter": "beta", "values": [0.1], "seeds": []},
        {"parameter": "beta", "values": [0.1], "seeds": [0], "extra": 1},
        {"parameter": "beta", "values": [0.1], "seeds": [0], "base_config": {"bogus": 1}},
        {"parameter": "n_agents", "values": [2.5], "seeds": [0]},
    ])
    def test_invalid_spec(self, tmp_path, body):
        proc = cli("sweep", "--spec", write(tmp_path / "s.json", body), "--out-dir", tmp_path)
        assert proc.returncode == 2 and "SpecInvalid" in proc.stderr

    def test_log_env(self, tmp_path):
        import os
        env = dict(os.environ, PPAI_LOG="INFO")
        proc = cli("sweep", "--spec", self.spec(tmp_path, values=[1e-3], seeds=[0]), "--out-dir", tmp_path, env=env)
        assert proc.returncode == 0 and "sweep of 1 runs" in proc.stderr
        env["PPAI_LOG"] = "WARNING"
        proc = cli("sweep", "--spec", self.spec(tmp_path, values=[1e-3], seeds=[0]), "--out-dir", tmp_path, env=env)
        assert "sweep of" not in proc.stderr

    def test_spearman_constant(self):
        assert harness.spearman([1, 2, 3], [5, 5, 5]) == 0.0
        assert harness.spearman([1, 2, 3], [3, 2, 1]) == -1.0


class TestAnalyzeGame:
    def test_default_suite_passes(self, tmp_path, capsys):
        assert harness.main(["analyze-game", "--out-dir", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "game_report.json").read_text())
        assert {"mode", "trials", "max_violation", "convergence_rate", "bpoa_max"} <= set(report)
        assert report["bpoa_max"] <= 5 / 3
        assert report["trials"] == 10_000
        assert report["affine_sum_potential_witness"] is not None

    def test_fault_injection_fails(self, tmp_path):
        code = harness.main(["analyze-game", "--inject-fault", "--bpoa-draws", "20", "--out-dir", str(tmp_path)])
        assert code == 1
        report = json.loads((tmp_path / "game_report.json").read_text())
        assert not report["checks"]["exact_potential_fixed"]

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            harness.main(["analyze-game", "--bpoa-draws", "50", "--trials", "500", "--out-dir", str(tmp_path / name)])
        assert (tmp_path / "a" / "game_report.json").read_bytes() == (tmp_path / "b" / "game_report.json").read_bytes()
