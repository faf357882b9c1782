import csv
import json
import os

import numpy as np
import pytest

from clustvit.cli import main
from clustvit.data import read_manifest, read_pgm, read_ppm


ENC = ("encoder.image_size=[64,64]", "encoder.patch_size=8", "encoder.embed_dim=8",
       "encoder.num_layers=2", "encoder.num_heads=2", "encoder.num_classes=3",
       "encoder.clusters=2", "encoder.injection_point=1")


def run(*argv):
    return main(list(argv))


def sets(*pairs):
    out = []
    for p in pairs:
        out += ["--set", p]
    return out


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert run("gen", "--preset", "sparse", "--seed", "5", "--out", str(root),
               "--count", "6", "--val-count", "3", "--test-count", "2",
               "--patch-size", "8", "--clusters", "2") == 0
    return root


@pytest.fixture(scope="session")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run("train", "--quiet", *sets(
        *ENC, f'data_root="{dataset}"', f'out_dir="{out}"',
        "total_iters=3", "batch_size=2", "log_every=1", "checkpoint_every=0"))
    assert code == 0
    return out


class TestGen:
    def test_layout_and_determinism(self, dataset, tmp_path):
        entries = read_manifest(dataset)
        assert [e.split for e in entries].count("train") == 6
        assert [e.split for e in entries].count("val") == 3
        assert [e.split for e in entries].count("test") == 2
        # regenerating with the same seed reproduces files byte for byte
        assert run("gen", "--preset", "sparse", "--seed", "5",
                   "--out", str(tmp_path), "--count", "1", "--val-count", "0",
                   "--test-count", "0", "--patch-size", "8", "--clusters", "2") == 0
        a = (dataset / "train" / "train_00000.ppm").read_bytes()
        b = (tmp_path / "train" / "train_00000.ppm").read_bytes()
        assert a == b

    def test_refuses_nonempty_without_force(self, dataset, capsys):
        assert run("gen", "--out", str(dataset), "--count", "1") == 1
        assert "not empty" in capsys.readouterr().err

    def test_force_overwrites(self, tmp_path):
        args = ("gen", "--out", str(tmp_path), "--count", "1",
                "--val-count", "0", "--test-count", "0")
        assert run(*args) == 0
        assert run(*args) == 1
        assert run(*args, "--force") == 0


class TestTrain:
    def test_artifacts(self, trained):
        assert (trained / "checkpoint.cvt").exists()
        cfg = json.loads((trained / "config.json").read_text())
        assert cfg["encoder"]["clusters"] == 2
        with open(trained / "metrics.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0][:2] == ["iter", "seg_loss"]
        assert len(rows) == 4  # header + 3 logged iterations
        for row in rows[1:]:
            assert all(np.isfinite(float(v)) for v in row)

    def test_missing_data_is_data_error(self, tmp_path, capsys):
        code = run("train", "--quiet", *sets(
            *ENC, f'data_root="{tmp_path}/nowhere"', f'out_dir="{tmp_path}/run"',
            "total_iters=1"))
        assert code == 2
        assert "data error" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # deliberate overflow
    def test_divergence_is_numeric_error(self, dataset, tmp_path, capsys):
        code = run("train", "--quiet", *sets(
            *ENC, f'data_root="{dataset}"', f'out_dir="{tmp_path}/boom"',
            "total_iters=20", "batch_size=1", "base_lr=1e12", "min_lr=1e11",
            "checkpoint_every=0"))
        assert code == 3
        assert "non-finite loss at iteration" in capsys.readouterr().err


class TestEval:
    def test_artifacts(self, dataset, trained, tmp_path):
        out = tmp_path / "eval"
        code = run("eval", "--checkpoint", str(trained / "checkpoint.cvt"),
                   "--data", str(dataset), "--split", "val", "--out", str(out),
                   "--warmup", "1", "--iters", "2", "--viz")
        assert code == 0
        with open(out / "eval.csv") as f:
            header, row = list(csv.reader(f))
        assert header == ["split", "miou", "cluster_acc", "img_s",
                          "flops_mean", "flops_std"]
        assert row[0] == "val" and 0.0 <= float(row[1]) <= 1.0
        with open(out / "cost.csv") as f:
            cost_rows = list(csv.reader(f))[1:]
        assert len(cost_rows) == 3
        with open(out / "token_histogram.csv") as f:
            hist = list(csv.reader(f))[1:]
        assert sum(int(r[2]) for r in hist) == 3
        # visualization files decode as valid netpbm images
        pred = read_pgm(out / "viz" / "val_00000.pred.pgm")
        assert pred.shape == (64, 64) and pred.min() >= 1
        assert read_ppm(out / "viz" / "val_00000.pseudo.ppm").shape == (64, 64, 3)
        assert read_ppm(out / "viz" / "val_00000.clusters.ppm").shape == (64, 64, 3)

    def test_config_discovered_next_to_checkpoint(self, dataset, trained, tmp_path):
        code = run("eval", "--checkpoint", str(trained / "checkpoint.cvt"),
                   "--data", str(dataset), "--out", str(tmp_path),
                   "--warmup", "1", "--iters", "1")
        assert code == 0

    def test_missing_checkpoint_is_data_error(self, dataset, tmp_path):
        code = run("eval", "--checkpoint", str(tmp_path / "none.cvt"),
                   "--config", "/dev/null", "--data", str(dataset))
        assert code in (1, 2)


class TestAblateProfile:
    def test_single_cell_sweep(self, dataset, tmp_path):
        out = tmp_path / "sweep"
        code = run("ablate", "--k-list", "2", "--ip-list", "1",
                   "--out", str(out), "--warmup", "1", "--iters", "2",
                   *sets(*ENC, f'data_root="{dataset}"', "total_iters=2",
                         "batch_size=2", "log_every=1", "checkpoint_every=0"))
        assert code == 0
        with open(out / "sweep.csv") as f:
            header, row = list(csv.reader(f))
        assert header[:2] == ["k", "ip"] and row[:2] == ["2", "1"]
        assert row[6] == ""  # no error recorded
        assert (out / "k2_ip1" / "checkpoint.cvt").exists()

    def test_failed_cell_recorded_and_sweep_continues(self, dataset, tmp_path):
        out = tmp_path / "sweep2"
        # ip=9 is invalid for a 2-layer encoder: the cell fails, k=2/ip=1 runs
        code = run("ablate", "--k-list", "2", "--ip-list", "9,1",
                   "--out", str(out), "--warmup", "1", "--iters", "2",
                   *sets(*ENC, f'data_root="{dataset}"', "total_iters=2",
                         "batch_size=2", "log_every=1", "checkpoint_every=0"))
        assert code == 0
        with open(out / "sweep.csv") as f:
            rows = list(csv.reader(f))[1:]
        assert rows[0][6] != "" and rows[1][6] == ""

    def test_profile_curve(self, tmp_path, capsys):
        code = run("profile", "--out", str(tmp_path), *sets(*ENC))
        assert code == 0
        assert "GFLOPs" in capsys.readouterr().out
        with open(tmp_path / "profile.csv") as f:
            rows = list(csv.reader(f))[1:]
        assert len(rows) == 65  # t = 1 .. 1 + 64 patches
        flops = [int(r[1]) for r in rows]
        assert flops == sorted(flops)
        assert all(r[2] == rows[0][2] for r in rows)


class TestUsage:
    def test_unknown_command(self, capsys):
        assert run("frobnicate") == 1

    def test_bad_override(self, capsys):
        assert run("train", "--set", "notkeyvalue") == 1
        assert "key=value" in capsys.readouterr().err

    def test_missing_required_flag(self):
        assert run("eval", "--data", "somewhere") == 1
