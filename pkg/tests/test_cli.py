import csv

import pytest

from vitt.cli import main
from vitt.container import read_manifest

SMALL = ["dataset.originals_per_group=1", "dataset.n_pure_matrix=2", "dataset.n_pure_fiber=2",
         "dataset.n_train=30", "dataset.seq_len=10"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--seed", "3", "--out", str(out), *SMALL]) == 0
    return out


def test_gen_data_manifest(dataset):
    m = read_manifest(dataset / "manifest.txt")
    assert m["n_total"] == "34" and m["seed"] == "3" and m["seq_len"] == "10"


def test_data_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("VITT_DATA_ROOT", str(tmp_path / "root"))
    assert main(["gen-data", *SMALL]) == 0
    assert (tmp_path / "root" / "train.vttf").exists()


def test_train_and_eval(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--seed", "1", "--ret", "off",
                 "train.epochs=2"]) == 0
    cfg = read_manifest(run / "config.txt")
    assert cfg["train.ret"] == "false" and cfg["train.epochs"] == "2" and cfg["train.seed"] == "1"
    rows = list(csv.reader(open(run / "losses.csv")))
    assert rows[0] == ["epoch", "train_mse", "test_mse", "lr"] and len(rows) == 3
    rep = tmp_path / "rep"
    assert main(["eval", "--suite", "unseen", "--ckpt", str(run / "ckpt.vttf"), "--out", str(rep)]) == 0
    assert len(list(csv.reader(open(rep / "summary.csv")))) == 7
    assert "random_radius" in capsys.readouterr().out


def test_exit_codes(tmp_path, dataset):
    assert main(["eval", "--suite", "unseen", "--ckpt", str(tmp_path / "none.vttf"), "--out", str(tmp_path / "r")]) == 5
    assert main(["gen-data", "--out", str(tmp_path / "d"), "dataset.nope=1"]) == 2
    assert main(["gen-data", "--preset", "laptop", "--out", str(tmp_path / "d")]) == 2
    assert main(["gen-data", "--out", str(tmp_path / "d"), "dataset.n_train=0"]) == 2
    # a one-pixel gap at 8 px per side leaves no room for ten fibers
    assert main(["gen-data", "--out", str(tmp_path / "d"), *SMALL, "dataset.image_side=8"]) == 3
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "nan"), "train.epochs=2",
                 "train.lr0=1e300"]) == 4
