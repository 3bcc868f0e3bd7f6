import csv
import hashlib
import json

import numpy as np
import pytest

from cyclecluster.cli import main
from cyclecluster.dataset import Pool, load_csv, load_idx_images, save_csv

FAST = {
    "K": 4, "n_labeled": 4, "splits": 1, "epochs": 2, "init_epochs": 2,
    "batch_size": 10, "labeled_batch": 4, "unlabeled_batch": 6,
    "hidden": [8], "embed_dim": 4, "k_nn": 4,
    "data": {"generator": "two_moons", "n": 60, "noise": 0.1, "seed": 0},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_train_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", write_config(tmp_path, FAST), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert 0.0 <= summary["mean_error"] <= 1.0 and summary["n_splits"] == 1
    assert summary["std_error"] == 0.0
    lines = (out / "epochs.jsonl").read_text().splitlines()
    assert len(lines) == FAST["epochs"]
    assert json.loads(lines[0])["split"] == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["K"] == 4 and manifest["dataset_fingerprint"]
    assert "unlabeled_error" in capsys.readouterr().out


def test_toml_config(tmp_path):
    text = """
K = 4
n_labeled = 4
splits = 1
epochs = 1
init_epochs = 1
batch_size = 10
labeled_batch = 4
unlabeled_batch = 6
hidden = [8]
embed_dim = 4
k_nn = 4

[data]
generator = "blobs"
n = 40
classes = 2
"""
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "r")]) == 0


def test_missing_key_exits_2(tmp_path, capsys):
    cfg = {k: v for k, v in FAST.items() if k != "K"}
    code = main(["train", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "r")])
    assert code == 2
    assert "`K`" in capsys.readouterr().err


def test_bad_value_exits_2(tmp_path, capsys):
    code = main(["train", "--config", write_config(tmp_path, {**FAST, "alpha": 1.5}),
                 "--out", str(tmp_path / "r")])
    assert code == 2 and "alpha" in capsys.readouterr().err


def test_unreadable_data_exits_3(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("f0,label\nx,0\n")
    code = main(["train", "--config", write_config(tmp_path, FAST), "--out", str(tmp_path / "r"),
                 "--data", str(bad)])
    assert code == 3


def test_summary_byte_identical(tmp_path):
    cfg = write_config(tmp_path, FAST)
    for name in ("a", "b"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    assert digest(tmp_path / "a" / "checkpoint.json") == digest(tmp_path / "b" / "checkpoint.json")


def test_seed_override_changes_run(tmp_path):
    cfg = write_config(tmp_path, {**FAST, "epochs": 1})
    main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]
    assert a["model_seed"] == 0 and b["model_seed"] == 5 and b["split_seed"] == 5


def test_purely_graphical_flag(tmp_path):
    out = tmp_path / "r"
    main(["train", "--config", write_config(tmp_path, FAST), "--out", str(out), "--purely-graphical"])
    assert json.loads((out / "summary.json").read_text())["mode"] == "purely_graphical"
    first = json.loads((out / "epochs.jsonl").read_text().splitlines()[0])
    assert first["cluster_steps"] == 0


class TestEval:
    @pytest.fixture()
    def fitted(self, tmp_path):
        # separable blobs; enough supervised epochs to fit the training pool
        cfg = {**FAST, "K": 2, "n_labeled": 40, "epochs": 1, "init_epochs": 60,
               "data": {"generator": "blobs", "n": 40, "classes": 2, "separation": 12}}
        out = tmp_path / "run"
        assert main(["train", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == 0
        data = tmp_path / "blobs.csv"
        assert main(["gen-data", "--kind", "blobs", "--n", "40", "--classes", "2",
                     "--separation", "12", "--out", str(data)]) == 0
        return out / "checkpoint.json", data

    def test_zero_error_on_fitted_pool(self, fitted, tmp_path, capsys):
        ckpt, data = fitted
        before = digest(ckpt)
        capsys.readouterr()
        out = tmp_path / "eval.json"
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(out)]) == 0
        assert capsys.readouterr().out.strip() == "error_rate: 0.0000"
        assert json.loads(out.read_text())["error_rate"] == 0.0
        assert digest(ckpt) == before

    def test_wrong_input_dim_exits_3(self, fitted, tmp_path, capsys):
        ckpt, _ = fitted
        other = tmp_path / "d3.csv"
        save_csv(Pool(np.zeros((4, 3)), [0, 1, 0, 1], 2), other)
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(other)]) == 3
        assert "d_in" in capsys.readouterr().err

    def test_missing_checkpoint_exits_3(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "nope.json"),
                     "--data", str(tmp_path / "x.csv")]) == 3


class TestSweep:
    def test_k_grid_rows(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {**FAST, "epochs": 1})
        out = tmp_path / "sweep.csv"
        # two-moons has C = 2: sweep K over {C, 3C}
        assert main(["sweep", "--config", cfg, "--K", "2,6", "--splits", "2", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["K"] for r in rows] == ["2", "6"]
        assert all(r["splits"] == "2" and r["n_l"] == "4" for r in rows)
        assert capsys.readouterr().out == out.read_text()

    def test_baseline_row_and_json(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {**FAST, "epochs": 1})
        assert main(["sweep", "--config", cfg, "--K", "4", "--n-labeled", "4,6",
                     "--purely-graphical", "--format", "json"]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert [(r["K"], r["n_l"]) for r in rows] == [
            (4, 4), ("purely_graphical", 4), (4, 6), ("purely_graphical", 6)
        ]

    def test_bad_k_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, FAST)
        assert main(["sweep", "--config", cfg, "--K", "0"]) == 2


class TestGenData:
    def test_csv(self, tmp_path):
        out = tmp_path / "m.csv"
        assert main(["gen-data", "--n", "50", "--out", str(out)]) == 0
        pool = load_csv(out)
        assert pool.n == 50 and pool.dim == 2 and pool.class_count == 2
        assert out.read_text().splitlines()[0] == "f0,f1,label"

    def test_idx(self, tmp_path):
        out = tmp_path / "b"
        assert main(["gen-data", "--kind", "blobs", "--n", "30", "--classes", "3", "--dim", "4",
                     "--format", "idx", "--out", str(out)]) == 0
        pool = load_idx_images(tmp_path / "b.images.idx", tmp_path / "b.labels.idx")
        assert pool.n == 30 and pool.dim == 4 and pool.class_count == 3

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["gen-data", "--n", "40", "--seed", "3", "--out", str(a)])
        main(["gen-data", "--n", "40", "--seed", "3", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_bad_args_exit_2(self, tmp_path):
        assert main(["gen-data", "--n", "1", "--out", str(tmp_path / "x.csv")]) == 2
