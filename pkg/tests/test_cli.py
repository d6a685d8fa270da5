import json

import numpy as np
import pytest

from c3rec.cli import main
from c3rec.data import load_dataset
from c3rec.model import C3Model
from tests.conftest import small_config

FAST = ["--embedding-dim", "8", "--heads", "2", "--layers", "1",
        "--dropout", "0.0", "--epochs", "1", "--eval-negatives", "20"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("data")
    assert main(["synth", "--users", "50", "--items", "100", "--groups", "20",
                 "--seed", "7", "-o", str(path)]) == 0
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--dataset", data_dir, "--out", str(out),
                 "--quiet", *FAST])
    assert code == 0
    return str(out)


def test_synth_writes_loadable_corpus(data_dir):
    ds = load_dataset(data_dir)
    assert ds.num_users == 50
    assert ds.num_groups == 20


def test_train_writes_artifacts(run_dir, tmp_path):
    import os
    names = set(os.listdir(run_dir))
    assert {"best.ckpt", "last.ckpt", "log.jsonl",
            "config.echo.json", "eval.json"} <= names
    echo = json.load(open(os.path.join(run_dir, "config.echo.json")))
    assert echo["embedding_dim"] == 8
    assert echo["epochs"] == 1


def test_eval_subcommand(run_dir, data_dir, tmp_path, capsys):
    out = str(tmp_path / "evalout")
    code = main(["eval", "--checkpoint", run_dir + "/best.ckpt",
                 "--dataset", data_dir, "--out", out,
                 "--eval-negatives", "20"])
    assert code == 0
    report = json.load(open(out + "/eval.json"))
    assert "HR@10" in report["group"]
    assert "group" in capsys.readouterr().out


def test_eval_untrained_model_near_uniform(tmp_path):
    # random-init model on a fresh corpus: HR@10 should sit near 10/101
    data = str(tmp_path / "d")
    assert main(["synth", "--users", "300", "--items", "200", "--groups", "40",
                 "--seed", "1", "-o", data]) == 0
    ds = load_dataset(data)
    model = C3Model(ds.num_users, ds.num_items, small_config(seed=1))
    ckpt = str(tmp_path / "rand.ckpt")
    model.save(ckpt)
    out = str(tmp_path / "out")
    assert main(["eval", "--checkpoint", ckpt, "--dataset", data,
                 "--out", out, "--seed", "1"]) == 0
    report = json.load(open(out + "/eval.json"))
    assert abs(report["user"]["HR@10"] - 10.0 / 101.0) <= 0.06


def test_double_ablation_flags(data_dir, tmp_path):
    out = str(tmp_path / "abl")
    code = main(["train", "--dataset", data_dir, "--out", out, "--quiet",
                 "--no-contrastive", "--no-margin", *FAST])
    assert code == 0
    echo = json.load(open(out + "/config.echo.json"))
    assert echo["no_contrastive"] is True
    assert echo["no_margin"] is True
    log = [json.loads(l) for l in open(out + "/log.jsonl")]
    assert all(e["loss"]["l_cont"] == 0.0 for e in log)


def test_cli_flags_override_config_file(data_dir, tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "dataset": data_dir, "out": str(tmp_path / "r1"),
        "embedding_dim": 8, "heads": 2, "layers": 1, "dropout": 0.0,
        "epochs": 1, "eval_negatives": 20, "lr": 0.001,
    }))
    assert main(["train", "-c", str(cfg_path), "--quiet", "--lr", "0.002"]) == 0
    echo = json.load(open(str(tmp_path / "r1" / "config.echo.json")))
    assert echo["lr"] == 0.002    # flag wins
    assert echo["layers"] == 1    # file value survives


def test_robustness_subcommand(run_dir, data_dir, tmp_path):
    out = str(tmp_path / "rob")
    code = main(["robustness", "--checkpoint", run_dir + "/best.ckpt",
                 "--dataset", data_dir, "--out", out, "--mask-ratio", "0.8"])
    assert code == 0
    drift = json.load(open(out + "/drift.json"))
    assert -1.0 <= drift["mean_cosine"] <= 1.0
    assert drift["mask_ratio"] == 0.8


def test_export_embeddings_subcommand(run_dir, data_dir, tmp_path):
    out = str(tmp_path / "exp")
    code = main(["export-embeddings", "--checkpoint", run_dir + "/best.ckpt",
                 "--dataset", data_dir, "--out", out])
    assert code == 0
    lines = open(out + "/embeddings.csv").read().splitlines()
    assert lines[0].startswith("group_id,variant,dim_0")
    assert len(lines) == 1 + 2 * 20


def test_grid_subcommand(data_dir, tmp_path, capsys):
    out = str(tmp_path / "grid")
    code = main(["grid", "--dataset", data_dir, "--out", out, "--quiet", *FAST,
                 "--thresholds", "3", "--mask-ratios", "0.2,0.4",
                 "--betas", "0.05"])
    assert code == 0
    table = json.load(open(out + "/grid.json"))
    assert len(table) == 2
    assert "best:" in capsys.readouterr().out


def test_usage_errors_exit_one():
    assert main(["train", "--bogus-flag"]) == 1
    assert main(["no-such-command"]) == 1
    assert main([]) == 1


def test_data_errors_exit_two(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"),
                 "--dataset", str(tmp_path)]) == 2
    assert main(["train", "--dataset", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "o"), "--quiet", *FAST]) == 2
