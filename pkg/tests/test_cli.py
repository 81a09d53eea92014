import os

import numpy as np
import pytest

from msfcn.cli import main
from msfcn.data import DatasetManifest
from msfcn.tensor import load_tensor, save_tensor

CONFIG = """# small desk run
net.encoder_channels = 4,8
train.batch_size = 4
train.max_epochs = 2
train.lr = 0.01
"""


@pytest.fixture(scope="module")
def shapes(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--kind", "shapes", "--n", "5", "--size", "16", "--classes", "3",
                 "--out", str(root / "data")]) == 0
    (root / "run.cfg").write_text(CONFIG)
    assert main(["train", "--config", str(root / "run.cfg"), "--manifest", str(root / "data" / "manifest.csv"),
                 "--out", str(root / "run"), "--seed", "5"]) == 0
    return root


def test_synth_temporal(tmp_path, capsys):
    assert main(["synth", "--kind", "temporal", "--t", "4", "--n", "16", "--seed", "7", "--size", "16",
                 "--out", str(tmp_path)]) == 0
    m = DatasetManifest.load(tmp_path / "manifest.csv")
    assert len(m.entries) == 16 and m.time_steps == 4
    assert "16" in capsys.readouterr().out


def test_tile(tmp_path, capsys):
    save_tensor(np.zeros((1417, 2652), np.float32), tmp_path / "a.tns")
    save_tensor(np.zeros((1417, 2652), np.uint16), tmp_path / "a_lbl.tns")
    assert main(["tile", "--image", str(tmp_path / "a.tns"), "--label", str(tmp_path / "a_lbl.tns"),
                 "--patch", "256", "--out", str(tmp_path / "p")]) == 0
    m = DatasetManifest.load(tmp_path / "p" / "manifest.csv")
    assert len(m.entries) == 66
    assert "66 patches (6 rows x 11 cols)" in capsys.readouterr().out
    lbl = load_tensor(tmp_path / "p" / m.entries[-1].label)
    assert lbl.shape == (256, 256) and (lbl[-1] == 65535).all()


def test_split_deterministic(shapes, tmp_path):
    src = shapes / "data" / "manifest.csv"
    for name in ("a.csv", "b.csv"):
        assert main(["split", "--manifest", str(src), "--frac", "0.6,0.2,0.2", "--seed", "1",
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()


def test_train_outputs(shapes):
    run = shapes / "run"
    assert {"config.txt", "train.log", "best"} <= set(os.listdir(run))
    assert "manifest.txt" in os.listdir(run / "best")
    echo = (run / "config.txt").read_text()
    assert "net.encoder_channels = 4,8" in echo and "seed = 5" in echo
    assert len((run / "train.log").read_text().splitlines()) == 2


def test_train_same_seed_same_log(shapes, tmp_path):
    assert main(["train", "--config", str(shapes / "run.cfg"), "--manifest",
                 str(shapes / "data" / "manifest.csv"), "--out", str(tmp_path), "--seed", "5"]) == 0
    assert (tmp_path / "train.log").read_bytes() == (shapes / "run" / "train.log").read_bytes()


def test_train_echo_reproduces(shapes, tmp_path):
    assert main(["train", "--config", str(shapes / "run" / "config.txt"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "train.log").read_bytes() == (shapes / "run" / "train.log").read_bytes()


def test_train_bad_key(shapes, tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text(CONFIG + "train.momentum = 0.9\n")
    code = main(["train", "--config", str(tmp_path / "bad.cfg"), "--manifest",
                 str(shapes / "data" / "manifest.csv"), "--out", str(tmp_path / "run")])
    assert code == 1
    err = capsys.readouterr().err
    assert "train.momentum" in err and len(err.strip().splitlines()) == 1


def test_eval(shapes, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(shapes / "run" / "best"), "--manifest",
                 str(shapes / "data" / "manifest.csv"), "--split", "train", "--out", str(tmp_path)]) == 0
    assert {"report.csv", "confusion.csv", "summary.txt"} <= set(os.listdir(tmp_path))
    assert "oa=" in capsys.readouterr().out
    cm = np.loadtxt(tmp_path / "confusion.csv", delimiter=",")
    assert cm.shape == (3, 3) and cm.sum() == 3 * 16 * 16


def test_eval_empty_split(shapes, tmp_path):
    m = DatasetManifest.load(shapes / "data" / "manifest.csv")
    for e in m.entries:
        e.split = "train"
    m.save(tmp_path / "all_train.csv")
    code = main(["eval", "--checkpoint", str(shapes / "run" / "best"), "--manifest",
                 str(tmp_path / "all_train.csv"), "--split", "test", "--out", str(tmp_path / "o")])
    assert code == 2


@pytest.mark.parametrize("size", [16, 30])
def test_predict(shapes, tmp_path, size):
    save_tensor(np.random.default_rng(0).random((3, size, size), dtype=np.float32), tmp_path / "img.tns")
    assert main(["predict", "--checkpoint", str(shapes / "run" / "best"), "--image", str(tmp_path / "img.tns"),
                 "--out", str(tmp_path / "out.tns")]) == 0
    out = load_tensor(tmp_path / "out.tns")
    assert out.shape == (size, size) and out.dtype == np.uint16 and out.max() < 3


def test_gradcheck_subset(capsys):
    assert main(["gradcheck", "--ops", "relu,softmax_cross_entropy", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "relu" in out and "overall: PASS" in out


def test_gradcheck_unknown_op():
    assert main(["gradcheck", "--ops", "tanh"]) == 1


@pytest.mark.parametrize("preset,ref", [("2d_default", "2.67"), ("3d_default", "6.58")])
def test_summary(capsys, preset, ref):
    assert main(["summary", "--config", preset]) == 0
    out = capsys.readouterr().out
    assert f"reference parameters: {ref} M" in out and "conv MACs" in out


def test_summary_custom_input(capsys):
    assert main(["summary", "--config", "2d_default", "--input", "3x1x64x64"]) == 0
    assert "input: 3x1x64x64" in capsys.readouterr().out
    assert main(["summary", "--config", "2d_default", "--input", "3x1x60x64"]) == 1


def test_missing_inputs(tmp_path):
    # no checkpoint manifest is a checkpoint error (1); a missing manifest is a data error (2)
    assert main(["predict", "--checkpoint", str(tmp_path), "--image", str(tmp_path / "none.tns"),
                 "--out", str(tmp_path / "o.tns")]) == 1
    assert main(["split", "--manifest", str(tmp_path / "none.csv")]) == 2


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1


def test_thread_env(monkeypatch, capsys):
    monkeypatch.setenv("MSFCN_THREADS", "one")
    assert main(["summary"]) == 1
    monkeypatch.setenv("MSFCN_THREADS", "1")
    assert main(["summary"]) == 0
