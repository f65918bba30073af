import csv
import hashlib
import json

import pytest

from rldp.cli import main

BASE_MODEL = {"model": "m1",
              "domain": {"kind": "box", "lo": [0.0], "hi": [1.0]},
              "sigma_scale": 0.5, "horizon": 0.5}


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestSimulate:
    def test_row_count_and_exit(self, tmp_path):
        cfg = {"schema_version": 1, "seed": 1, "model": BASE_MODEL,
               "grid": {"horizon": 0.5, "n_steps": 16},
               "run": {"n_particles": 8}}
        cfg_path = _write(tmp_path, "sim.json", cfg)
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg_path, "--out", str(out)]) == 0
        with open(out / "paths.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 8 * 17
        result = json.loads((out / "result.json").read_text())
        assert result["n_particles"] == 8
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_hash"] == result["config_hash"]
        assert "paths.csv" in manifest["outputs"]

    def test_result_has_no_timestamps(self, tmp_path):
        cfg = {"schema_version": 1, "seed": 1, "model": BASE_MODEL,
               "grid": {"horizon": 0.5, "n_steps": 8},
               "run": {"n_particles": 2}}
        cfg_path = _write(tmp_path, "sim.json", cfg)
        out = tmp_path / "out"
        main(["simulate", "--config", cfg_path, "--out", str(out)])
        text = (out / "result.json").read_text()
        assert "created_at" not in text
        # timestamps live in the manifest only
        assert "created_at" in (out / "manifest.json").read_text()


class TestLaplace:
    def test_constant_functional_exact(self, tmp_path):
        cfg = {"schema_version": 1, "seed": 2, "model": BASE_MODEL,
               "grid": {"horizon": 0.5, "n_steps": 8},
               "run": {"functional": {"functional": "constant", "c": 0.3},
                       "n_particles": 4, "n_replicas": 8}}
        cfg_path = _write(tmp_path, "lap.json", cfg)
        out = tmp_path / "out"
        assert main(["laplace", "--config", cfg_path, "--out", str(out)]) == 0
        result = json.loads((out / "result.json").read_text())
        assert result["value"] == 0.3
        assert result["std_error"] == 0.0


class TestDeterminism:
    def test_same_config_identical_bytes(self, tmp_path):
        cfg = {"schema_version": 1, "seed": 4, "model": BASE_MODEL,
               "grid": {"horizon": 0.5, "n_steps": 16},
               "run": {"n_particles": 4}}
        cfg_path = _write(tmp_path, "sim.json", cfg)
        outs = []
        for i, workers in enumerate((1, 4)):
            out = tmp_path / f"out{i}"
            assert main(["simulate", "--config", cfg_path, "--out", str(out),
                         "--workers", str(workers)]) == 0
            outs.append(out)
        assert _digest(outs[0] / "result.json") == _digest(outs[1] / "result.json")
        assert _digest(outs[0] / "paths.csv") == _digest(outs[1] / "paths.csv")

    def test_seed_flag_overrides(self, tmp_path):
        cfg = {"schema_version": 1, "seed": 4, "model": BASE_MODEL,
               "grid": {"horizon": 0.5, "n_steps": 8},
               "run": {"n_particles": 2}}
        cfg_path = _write(tmp_path, "sim.json", cfg)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", cfg_path, "--out", str(out1)])
        main(["simulate", "--config", cfg_path, "--out", str(out2),
              "--seed", "99"])
        r1 = json.loads((out1 / "result.json").read_text())
        r2 = json.loads((out2 / "result.json").read_text())
        assert r1["seed"] == 4 and r2["seed"] == 99
        assert r1["config_hash"] != r2["config_hash"]


class TestErrorHandling:
    def test_missing_config_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_bad_schema_version(self, tmp_path):
        cfg_path = _write(tmp_path, "bad.json",
                          {"schema_version": 99, "model": {}, "grid": {}})
        assert main(["simulate", "--config", cfg_path,
                     "--out", str(tmp_path / "o")]) == 2

    def test_missing_block(self, tmp_path):
        cfg_path = _write(tmp_path, "bad.json",
                          {"schema_version": 1, "model": BASE_MODEL})
        assert main(["simulate", "--config", cfg_path,
                     "--out", str(tmp_path / "o")]) == 2

    def test_invalid_model_name(self, tmp_path):
        cfg_path = _write(tmp_path, "bad.json",
                          {"schema_version": 1,
                           "model": {"model": "nope",
                                     "domain": BASE_MODEL["domain"]},
                           "grid": {"horizon": 0.5, "n_steps": 8}})
        assert main(["simulate", "--config", cfg_path,
                     "--out", str(tmp_path / "o")]) == 2

    def test_budget_exceeded(self, tmp_path):
        cfg = {"schema_version": 1, "seed": 1, "model": BASE_MODEL,
               "grid": {"horizon": 0.5, "n_steps": 16}, "budget": 10,
               "run": {"n_particles": 100}}
        cfg_path = _write(tmp_path, "sim.json", cfg)
        assert main(["simulate", "--config", cfg_path,
                     "--out", str(tmp_path / "o")]) == 3

    def test_bad_workers(self, tmp_path):
        cfg_path = _write(tmp_path, "sim.json",
                          {"schema_version": 1, "model": BASE_MODEL,
                           "grid": {"horizon": 0.5, "n_steps": 8},
                           "run": {"n_particles": 2}})
        assert main(["simulate", "--config", cfg_path, "--workers", "0",
                     "--out", str(tmp_path / "o")]) == 2


class TestOtherKinds:
    def test_variational_and_rate_and_submartingale(self, tmp_path):
        common = {"schema_version": 1, "seed": 6, "model": BASE_MODEL,
                  "grid": {"horizon": 0.5, "n_steps": 8}}
        var_cfg = dict(common, run={
            "functional": {"functional": "constant", "c": 0.0},
            "policy": {"policy": "constant", "v": [1.0]},
            "n_particles": 4, "n_replicas": 4})
        out = tmp_path / "var"
        assert main(["variational", "--config",
                     _write(tmp_path, "var.json", var_cfg),
                     "--out", str(out)]) == 0
        res = json.loads((out / "result.json").read_text())
        assert res["cost_part"] == pytest.approx(0.25)  # 1/2 v^2 T

        rate_cfg = dict(common, run={
            "target": {"kind": "terminal_point", "point": [0.5]},
            "lambdas": [1.0], "family": {"family": "constant", "bound": 1.0},
            "n_particles": 4, "n_replicas": 4, "opt_budget": 10,
            "radius": 1.0})
        out = tmp_path / "rate"
        assert main(["rate", "--config", _write(tmp_path, "rate.json", rate_cfg),
                     "--out", str(out)]) == 0
        res = json.loads((out / "result.json").read_text())
        assert res["feasible"] is True

        sub_cfg = dict(common, run={"function": "neg_x_sq", "n_particles": 64,
                                    "time_pairs": [[0.0, 0.5]]})
        out = tmp_path / "sub"
        assert main(["submartingale", "--config",
                     _write(tmp_path, "sub.json", sub_cfg),
                     "--out", str(out)]) == 0

    def test_chaos_kind_small(self, tmp_path):
        cfg = {"schema_version": 1, "seed": 6, "model": BASE_MODEL,
               "grid": {"horizon": 0.5, "n_steps": 8},
               "run": {"n_values": [8, 16], "n_replicas": 3, "n_ref": 64}}
        out = tmp_path / "chaos"
        assert main(["chaos", "--config", _write(tmp_path, "c.json", cfg),
                     "--out", str(out)]) == 0
        res = json.loads((out / "result.json").read_text())
        assert set(res["median_distance_by_n"]) == {"8", "16"}
        with open(out / "distances.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 2 * 3
