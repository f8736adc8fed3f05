"""CLI tests: config handling, artifact determinism, command wiring.

Everything runs through ``run_command`` in-process; one test drives the
installed module through a real subprocess to pin the console behavior.
"""

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from mvrml.checkpoint import load_model, save_model
from mvrml.cli import (
    config_from_dict,
    config_to_dict,
    load_config,
    run_command,
)
from mvrml.errors import ConfigError
from mvrml.nn_core import ArchSpec, init_model
from mvrml.rng import RngStream

TINY_SUITE = [
    {
        "domain_id": f"d{i}",
        "class_means": [[-2.0, 0.0], [0.0, 0.0], [2.0, 0.0]],
        "class_cov_diag": [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]],
        "rotation_deg": 15.0 * i,
        "samples_per_class": 30,
        "seed": i + 1,
    }
    for i in range(4)
]

TINY_CONFIG = {
    "seed": 5,
    "method": "mvrml",
    "target_index": 0,
    "suite": {"synthetic": TINY_SUITE},
    "training": {
        "epochs": 2,
        "iterations_per_epoch": 4,
        "batch_size": 8,
        "arch": {"hidden_dims": [8], "use_batchnorm_after": [0]},
    },
    "mvp": {"views": 3, "pcr_trials": 2},
}


def write_config(tmp_path, payload=None):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload if payload is not None else TINY_CONFIG))
    return str(path)


class TestConfig:
    def test_empty_config_gets_documented_defaults(self):
        cfg = config_from_dict({})
        assert cfg.training.trajectories_T == 3
        assert cfg.training.tasks_per_trajectory_s == 3
        assert cfg.mvp.num_views_m == 32
        assert cfg.method == "mvrml"
        assert cfg.synthetic_specs is not None and len(cfg.synthetic_specs) == 4

    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigError, match="training.trajektories"):
            config_from_dict({"training": {"trajektories": 3}})

    def test_invalid_strategy_is_named(self):
        with pytest.raises(ConfigError, match="training.strategy"):
            config_from_dict({"training": {"strategy": "s9"}})

    def test_invalid_method_is_named(self):
        with pytest.raises(ConfigError, match="method"):
            config_from_dict({"method": "boosting"})

    def test_both_suite_sources_rejected(self):
        with pytest.raises(ConfigError, match="suite"):
            config_from_dict({"suite": {"synthetic": TINY_SUITE, "csv": "x.csv"}})

    def test_round_trip_semantically_equal(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_config(path)
        again = config_from_dict(config_to_dict(cfg))
        assert again.training == cfg.training
        assert again.mvp == cfg.mvp
        assert again.synthetic_specs == cfg.synthetic_specs
        assert again.method == cfg.method
        assert again.arch == cfg.arch


class TestCheckpoint:
    def test_exact_round_trip(self, tmp_path):
        model = init_model(ArchSpec(3, (7, 5), 4, use_batchnorm_after=(0,)), RngStream(9))
        path = tmp_path / "ck.json"
        save_model(model, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.params, model.params)
        assert np.array_equal(loaded.bn_stats, model.bn_stats)
        assert loaded.arch == model.arch
        assert loaded.bn_momentum == model.bn_momentum


class TestCommands:
    def test_train_twice_bitwise_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run_command(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert run_command(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        for name in ("checkpoint.json", "train_report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_eval_and_mvp_eval(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        run_command(["train", "--config", cfg, "--out", str(out)])
        ck = str(out / "checkpoint.json")
        assert run_command(["eval", "--config", cfg, "--out", str(out), "--checkpoint", ck]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["kind"] == "metrics"
        assert 0.0 <= metrics["clean_accuracy"] <= 1.0
        assert metrics["mvp_accuracy"] is None
        assert run_command(
            ["mvp-eval", "--config", cfg, "--out", str(out), "--checkpoint", ck]
        ) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["mvp_accuracy"] is not None
        assert 0.0 <= metrics["pcr"] <= 1.0

    def test_bound_worked_example(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {
                "bound": {
                    "empirical_risk": 0.1,
                    "sup_divergence": 0.2,
                    "beta1": 0.01,
                    "beta2": 0.02,
                    "n_sequences": 100,
                    "delta": 0.1,
                    "loss_bound_M": 1.0,
                }
            },
        )
        out = tmp_path / "bound"
        assert run_command(["bound", "--config", cfg, "--out", str(out)]) == 0
        payload = json.loads((out / "bound.json").read_text())
        expected = 0.1 + 0.1 + 0.02 + 5.0 * math.sqrt(math.log(10.0) / 200.0) + 0.04
        assert payload["value"] == pytest.approx(expected, abs=1e-9)
        assert payload["inputs"]["n_sequences"] == 100

    def test_gen_data_round_trip(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "data"
        assert run_command(["gen-data", "--config", cfg, "--out", str(out)]) == 0
        csv_cfg = dict(TINY_CONFIG)
        csv_cfg["suite"] = {"csv": str(out / "suite.csv")}
        cfg2 = write_config(tmp_path, csv_cfg)
        run_out = tmp_path / "csvrun"
        assert run_command(["train", "--config", cfg2, "--out", str(run_out)]) == 0
        assert (run_out / "checkpoint.json").exists()

    def test_sharpness_and_surface(self, tmp_path):
        cfg_payload = dict(TINY_CONFIG)
        cfg_payload["sharpness"] = {"radii": [0.05, 0.1], "perturbations_per_radius": 3}
        cfg_payload["surface"] = {"resolution": 4}
        cfg = write_config(tmp_path, cfg_payload)
        outs = []
        for seed in (1, 2, 3):
            out = tmp_path / f"s{seed}"
            run_command(["train", "--config", cfg, "--out", str(out), "--seed", str(seed)])
            outs.append(out)
        first = str(outs[0] / "checkpoint.json")
        assert run_command(
            ["sharpness", "--config", cfg, "--out", str(tmp_path), "--checkpoint", first]
        ) == 0
        sharp = json.loads((tmp_path / "sharpness.json").read_text())
        assert [r["gamma"] for r in sharp["records"]] == [0.05, 0.1]
        assert run_command(
            ["surface", "--config", cfg, "--out", str(tmp_path), "--checkpoints"]
            + [str(o / "checkpoint.json") for o in outs]
        ) == 0
        surf = json.loads((tmp_path / "surface.json").read_text())
        assert np.isfinite(np.asarray(surf["losses"])).all()
        assert len(surf["a_coords"]) == 4

    def test_report_aggregates_means(self, tmp_path):
        records = []
        for seed, acc, pcr in ((0, 0.8, 0.2), (1, 0.9, 0.1)):
            path = tmp_path / f"m{seed}.json"
            path.write_text(json.dumps({
                "format_version": 1, "kind": "metrics", "method": "erm", "seed": seed,
                "target_domain_id": "d0", "clean_accuracy": acc,
                "mvp_accuracy": None, "pcr": pcr, "curves": [],
            }))
            records.append(str(path))
        out = tmp_path / "rep"
        assert run_command(["report", "--out", str(out), *records]) == 0
        lines = (out / "report.csv").read_text().strip().splitlines()
        assert len(lines) == 2
        row = lines[1].split(",")
        assert row[0] == "erm" and row[1] == "d0" and row[2] == "2"
        assert float(row[3]) == pytest.approx(0.85)
        assert float(row[7]) == pytest.approx(0.15)

    def test_bad_config_no_partial_artifacts(self, tmp_path):
        bad = write_config(tmp_path, {"method": "nope"})
        out = tmp_path / "never"
        assert run_command(["train", "--config", bad, "--out", str(out)]) == 2
        assert not out.exists()

    def test_unknown_flag_exits_nonzero(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_command(["train", "--frobnicate"])
        assert exc.value.code == 2

    def test_cli_subprocess_entry(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "sub"
        proc = subprocess.run(
            [sys.executable, "-m", "mvrml.cli", "train", "--config", cfg, "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "checkpoint.json").exists()
