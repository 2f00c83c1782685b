import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from uqgate.cli import main
from uqgate.policy import TrainConfig
from uqgate.synth import make_gate_trace, make_policy_trace
from uqgate.policy import save_trace


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run_cli(
        "gen-synth", "--output", str(out), "--n", "240", "--d", "6",
        "--seed", "3", "--noise-scales", "0.05,0.2",
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def calib_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("calib")
    code = run_cli(
        "calibrate", "--input", str(synth_dir / "store.jsonl"),
        "--output", str(out), "--seed", "5",
        "--predictions", str(synth_dir / "predictions.csv"),
        "--k-supp", "20", "--k-rank", "8",
    )
    assert code == 0
    return out


class TestGenSynth:
    def test_outputs_exist(self, synth_dir):
        for name in ("store.jsonl", "predictions.csv", "shifts.csv",
                     "resolved_config.json"):
            assert (synth_dir / name).exists()

    def test_reproducible(self, synth_dir, tmp_path):
        again = tmp_path / "again"
        code = run_cli(
            "gen-synth", "--output", str(again), "--n", "240", "--d", "6",
            "--seed", "3", "--noise-scales", "0.05,0.2",
        )
        assert code == 0
        assert (again / "store.jsonl").read_bytes() == \
            (synth_dir / "store.jsonl").read_bytes()


class TestCalibrate:
    def test_bundle_invariants(self, calib_dir):
        bundle = json.loads((calib_dir / "bundle.json").read_text())
        assert bundle["version"] == 1
        weights = bundle["epistemic"]["weights"]
        assert sum(weights) == pytest.approx(1.0, abs=1e-12)
        assert bundle["calibration"]["q_global"] > 0
        report = json.loads((calib_dir / "fit_report.json").read_text())
        assert report["n_cal"] + report["n_test"] == 240

    def test_byte_identical_rerun(self, synth_dir, calib_dir, tmp_path):
        again = tmp_path / "calib2"
        code = run_cli(
            "calibrate", "--input", str(synth_dir / "store.jsonl"),
            "--output", str(again), "--seed", "5",
            "--predictions", str(synth_dir / "predictions.csv"),
            "--k-supp", "20", "--k-rank", "8",
        )
        assert code == 0
        assert (again / "bundle.json").read_bytes() == \
            (calib_dir / "bundle.json").read_bytes()

    def test_forced_grad_weight_without_layers_names_module(
        self, synth_dir, tmp_path, capsys
    ):
        # strip the layer features out of the store
        bare = tmp_path / "bare.jsonl"
        with open(synth_dir / "store.jsonl") as fh, open(bare, "w") as out:
            for line in fh:
                obj = json.loads(line)
                obj.pop("layer_features", None)
                out.write(json.dumps(obj) + "\n")
        code = run_cli(
            "calibrate", "--input", str(bare), "--output", str(tmp_path / "o"),
            "--seed", "1", "--fixed-weights", "0.2,0.2,0.6",
        )
        assert code == 2
        assert "epistemic" in capsys.readouterr().err

    def test_config_file_merged_under_flags(self, synth_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"alpha": 0.2, "k_supp": 20, "k_rank": 8}))
        out = tmp_path / "out"
        code = run_cli(
            "calibrate", "--input", str(synth_dir / "store.jsonl"),
            "--output", str(out), "--seed", "5", "--alpha", "0.1",
            "--predictions", str(synth_dir / "predictions.csv"),
            "--config", str(cfg),
        )
        assert code == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["alpha"] == 0.1   # flag wins
        assert resolved["k_supp"] == 20   # config fills the gap


class TestScore:
    def test_calibration_scores_span_unit_interval(self, calib_dir, tmp_path):
        out = tmp_path / "scores"
        code = run_cli(
            "score", "--bundle", str(calib_dir / "bundle.json"),
            "--calibration", str(calib_dir / "calibration.jsonl"),
            "--input", str(calib_dir / "calibration.jsonl"),
            "--output", str(out),
        )
        assert code == 0
        with open(out / "scores.csv") as fh:
            rows = list(csv.DictReader(fh))
        sa = np.array([float(r["sigma_alea"]) for r in rows])
        se = np.array([float(r["sigma_epis"]) for r in rows])
        assert sa.min() <= 1e-6
        assert sa.max() == pytest.approx(1.0, abs=1e-12)
        assert np.all((se >= 0) & (se <= 1))


class TestIntervals:
    def test_interval_file_schema(self, calib_dir, synth_dir, tmp_path):
        out = tmp_path / "iv"
        code = run_cli(
            "intervals", "--bundle", str(calib_dir / "bundle.json"),
            "--calibration", str(calib_dir / "calibration.jsonl"),
            "--input", str(calib_dir / "test.jsonl"),
            "--predictions", str(synth_dir / "predictions.csv"),
            "--output", str(out),
        )
        assert code == 0
        with open(out / "intervals.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows
        for r in rows:
            assert float(r["lo"]) <= float(r["hi"])
            assert float(r["lo_clamped"]) >= 0.0
            assert float(r["hi_clamped"]) <= 1.0
            width = float(r["hi"]) - float(r["lo"])
            assert width == pytest.approx(float(r["width"]), abs=1e-12)

    def test_needs_some_prediction_source(self, calib_dir, tmp_path):
        code = run_cli(
            "intervals", "--bundle", str(calib_dir / "bundle.json"),
            "--calibration", str(calib_dir / "calibration.jsonl"),
            "--input", str(calib_dir / "test.jsonl"),
            "--output", str(tmp_path / "iv2"),
        )
        assert code == 1


@pytest.fixture(scope="module")
def trace_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("trace") / "trace.jsonl"
    save_trace(make_gate_trace(n_frames=200, seed=2), path)
    return path


class TestSimulate:
    def test_unreachable_threshold_never_escalates(self, trace_path, tmp_path):
        out = tmp_path / "sim"
        code = run_cli(
            "simulate", "--trace", str(trace_path), "--output", str(out),
            "--tau-epis", "1.0", "--tau-alea", "0.5",
        )
        assert code == 0
        doc = json.loads((out / "simulation.json").read_text())
        assert doc["escalation_rate"] == 0.0
        with open(out / "decisions.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert all(r["action"] == "nano" for r in rows)
        assert set(rows[0]) == {"frame", "sigma_alea", "sigma_epis", "regime",
                                "action"}

    def test_threshold_gate_escalates_epistemic_frames(self, trace_path, tmp_path):
        out = tmp_path / "sim2"
        code = run_cli(
            "simulate", "--trace", str(trace_path), "--output", str(out),
            "--tau-epis", "0.6", "--tau-alea", "0.5",
        )
        assert code == 0
        with open(out / "decisions.csv") as fh:
            rows = list(csv.DictReader(fh))
        escalated = [r for r in rows if r["action"] == "xlarge"]
        assert escalated
        assert all(r["regime"] == "epis_dominant" for r in escalated)


class TestTrainPolicyCli:
    def test_train_then_simulate(self, tmp_path):
        trace = tmp_path / "trace.jsonl"
        save_trace(
            make_policy_trace(n_sequences=1, frames_per_sequence=80, seed=4),
            trace,
        )
        out = tmp_path / "pol"
        code = run_cli(
            "train-policy", "--trace", str(trace), "--output", str(out),
            "--steps", "400", "--seed", "1",
        )
        assert code == 0
        assert (out / "policy.json").exists()
        with open(out / "train_log.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and set(rows[0]) == {"step", "loss", "mean_q", "epsilon"}

        sim_out = tmp_path / "sim"
        code = run_cli(
            "simulate", "--trace", str(trace), "--output", str(sim_out),
            "--policy", str(out / "policy.json"), "--greedy",
        )
        assert code == 0
        doc = json.loads((sim_out / "simulation.json").read_text())
        assert doc["mode"] == "policy"
        assert 0.0 <= doc["compute_savings"] <= 1.0


class TestReport:
    def test_summary_composition(self, calib_dir, synth_dir, tmp_path):
        scores_out = tmp_path / "scores"
        assert run_cli(
            "score", "--bundle", str(calib_dir / "bundle.json"),
            "--calibration", str(calib_dir / "calibration.jsonl"),
            "--input", str(calib_dir / "test.jsonl"),
            "--output", str(scores_out),
        ) == 0
        iv_out = tmp_path / "iv"
        assert run_cli(
            "intervals", "--bundle", str(calib_dir / "bundle.json"),
            "--calibration", str(calib_dir / "calibration.jsonl"),
            "--input", str(calib_dir / "test.jsonl"),
            "--predictions", str(synth_dir / "predictions.csv"),
            "--output", str(iv_out),
        ) == 0
        rep_out = tmp_path / "rep"
        code = run_cli(
            "report", "--output", str(rep_out),
            "--scores", str(scores_out / "scores.csv"),
            "--store", str(calib_dir / "test.jsonl"),
            "--intervals", str(iv_out / "intervals.csv"),
            "--model-id", "synthetic",
        )
        assert code == 0
        summary = json.loads((rep_out / "summary.json").read_text())
        assert summary["pearson_alea_epis"] is not None
        assert summary["coverage"] is not None
        assert (rep_out / "coverage.csv").exists()
        with open(rep_out / "coverage.csv") as fh:
            row = list(csv.DictReader(fh))[0]
        assert row["model_id"] == "synthetic"
        assert 0.0 <= float(row["coverage"]) <= 1.0


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert run_cli("calibrate") == 1  # no --output

    def test_data_error_missing_file(self, tmp_path, capsys):
        assert run_cli(
            "calibrate", "--input", str(tmp_path / "nope.jsonl"),
            "--output", str(tmp_path / "out"),
        ) == 2
        assert run_cli(
            "score", "--bundle", str(tmp_path / "nope.json"),
            "--calibration", str(tmp_path / "nope.jsonl"),
            "--input", str(tmp_path / "nope.jsonl"),
            "--output", str(tmp_path / "out2"),
        ) == 2

    def test_console_script_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "uqgate.cli", "gen-synth",
             "--output", str(tmp_path / "o"), "--n", "30"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
