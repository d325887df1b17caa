import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from goalgeom import model as mdl
from goalgeom.cli import main, resolve_config, UsageError
from goalgeom.data import generate_synthetic, load_bundle, save_bundle
from goalgeom.diagnostics import diagnose

FAST_TRAIN = ["--t-warm", "20", "--t-adapt", "3", "--tau", "0.4"]


@pytest.fixture
def small_data(tmp_path):
    path = tmp_path / "ds"
    assert main(["gen-data", "--seed", "1", "--k", "3", "--ambient-dim", "6",
                 "--n-per-class", "10", "--out", str(path)]) == 0
    return path


def read(path):
    return open(path, "rb").read()


class TestGenData:
    def test_repeatable(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-data", "--seed", "7", "--k", "3", "--n-per-class", "5",
                         "--out", str(tmp_path / name)]) == 0
        for f in os.listdir(tmp_path / "a"):
            if f != "resolved_config.json":
                assert read(tmp_path / "a" / f) == read(tmp_path / "b" / f)
        cfgs = [json.loads((tmp_path / n / "resolved_config.json").read_text()) for n in ("a", "b")]
        assert [{k: v for k, v in c.items() if k != "out"} for c in cfgs][0] == \
            {k: v for k, v in cfgs[1].items() if k != "out"}

    def test_loadable(self, small_data):
        b = load_bundle(small_data)
        assert b.k == 3 and b.ambient_dim == 6 and b.n_source == 30

    def test_config_file_and_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data": {"k": 2, "n_per_class": 4, "seed": 3}}))
        assert main(["gen-data", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "o")]) == 0
        resolved = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
        assert resolved["data"]["k"] == 2 and resolved["data"]["seed"] == 9

    def test_missing_out(self, capsys):
        assert main(["gen-data", "--seed", "1"]) == 2
        assert "--out" in capsys.readouterr().err

    def test_invalid_spec(self, tmp_path):
        assert main(["gen-data", "--noise", "-1", "--out", str(tmp_path / "o")]) == 2

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data": {"kk": 2}}))
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        with pytest.raises(UsageError):
            resolve_config({"model": {}}, {})


class TestTrain:
    def test_writes_report_and_checkpoint(self, small_data, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", "--data", str(small_data), *FAST_TRAIN, "--out", str(out)]) == 0
        assert "target accuracy" in capsys.readouterr().out
        rep = json.loads((out / "report.json").read_text())
        assert len(rep["history"]) == 23 and rep["checkpoint"] == "checkpoint.json"
        mdl.load_checkpoint(out / "checkpoint.json")

    def test_zero_epochs(self, small_data, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--data", str(small_data), "--t-warm", "0", "--t-adapt", "0", "--out", str(out)]) == 0
        assert json.loads((out / "report.json").read_text())["history"] == []

    def test_deterministic(self, small_data, tmp_path):
        for name in ("a", "b"):
            assert main(["train", "--data", str(small_data), *FAST_TRAIN, "--out", str(tmp_path / name)]) == 0
        assert read(tmp_path / "a" / "report.json") == read(tmp_path / "b" / "report.json")

    def test_corrupt_bundle(self, small_data, tmp_path):
        (small_data / "source_features.csv").write_text("x0,x1\n1.0,zz\n")
        assert main(["train", "--data", str(small_data), "--out", str(tmp_path / "run")]) == 2

    def test_abort_exit_code(self, small_data, tmp_path, capsys):
        code = main(["train", "--data", str(small_data), "--t-warm", "0", "--t-adapt", "2",
                     "--tau", "0.99", "--out", str(tmp_path / "run")])
        assert code == 3
        assert "lower tau" in capsys.readouterr().err

    def test_bad_train_value(self, small_data, tmp_path):
        assert main(["train", "--data", str(small_data), "--tau", "1.5", "--out", str(tmp_path / "r")]) == 2


class TestSweep:
    def test_duplicate_points(self, small_data, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--data", str(small_data), *FAST_TRAIN, "--grid", "1", "1", "--out", str(out)]) == 0
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 and rows[0] == rows[1]

    def test_all_failed(self, small_data, tmp_path):
        code = main(["sweep", "--data", str(small_data), "--t-warm", "0", "--t-adapt", "1", "--tau", "0.99",
                     "--grid", "1", "--out", str(tmp_path / "sw")])
        assert code == 3

    def test_bad_grid(self, small_data, tmp_path):
        assert main(["sweep", "--data", str(small_data), "--grid", "-1", "--out", str(tmp_path / "sw")]) == 2


class TestDiagnose:
    def test_missing_checkpoint(self, small_data, tmp_path):
        code = main(["diagnose", "--checkpoint", str(tmp_path / "none.json"), "--data", str(small_data),
                     "--out", str(tmp_path / "d")])
        assert code == 2

    def test_ideal_geometry_heatmap(self, tmp_path):
        # no domain shift and an identity embedding: each class keeps its own direction in both domains
        b = generate_synthetic(k=3, ambient_dim=6, n_per_class=20, theta_deg=0.0, translation=0.0, noise=0.1)
        save_bundle(b, tmp_path / "ds")
        means = np.stack([b.x_source[:, b.y_source == i].mean(axis=1) for i in range(3)])
        params = mdl.MlpParams([np.eye(6)], [np.zeros(6)], means, np.zeros(3))
        mdl.save_checkpoint(params, tmp_path / "ck.json")
        out = tmp_path / "d"
        assert main(["diagnose", "--checkpoint", str(tmp_path / "ck.json"), "--data", str(tmp_path / "ds"),
                     "--out", str(out)]) == 0
        with open(out / "heatmap.csv") as fh:
            m = np.array([[float(v) for v in row[1:]] for row in list(csv.reader(fh))[1:]])
        assert np.all(np.diag(m) > 0.95)
        assert np.all(np.diag(m)[:, None] > m + 0.5 - np.eye(3))
        report = json.loads((out / "diagnostics.json").read_text())
        direct = diagnose(params, load_bundle(tmp_path / "ds"))
        assert report["discriminant"] == pytest.approx(direct.discriminant)
        np.testing.assert_allclose(report["pairwise_cos_matrix"], direct.pairwise_cos_matrix, rtol=1e-12)


class TestVerify:
    SMALL = ["--seeds", "0", "--trials-t12", "200", "--trials-t3", "50", "--rank-trials", "50"]

    def test_passes(self, tmp_path):
        out = tmp_path / "v"
        assert main(["verify", *self.SMALL, "--out", str(out)]) == 0
        reports = json.loads((out / "verify.json").read_text())
        assert all(r["passed"] for r in reports)

    def test_forced_violation(self, tmp_path):
        assert main(["verify", *self.SMALL, "--force-violation", "--out", str(tmp_path / "v")]) == 1

    def test_bad_grid(self, tmp_path):
        assert main(["verify", *self.SMALL, "--lambda-grid", "-1", "--out", str(tmp_path / "v")]) == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "goalgeom.cli", "gen-data", "--k", "2", "--n-per-class", "3",
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "goalgeom.cli", "bogus"], capture_output=True, text=True)
    assert res.returncode == 2
