import json

import pytest

from lutlearn.cli import main

SMALL = ["dense:32", "bn", "dense:32", "bn", "dense:10", "bn", "softmax"]


@pytest.fixture
def cfg_file(tmp_path):
    cfg = {"layers": SMALL, "dataset": "synthetic", "n_train": 200, "n_test": 50, "batch_size": 50,
           "phase_epochs": [1, 1, 1], "lr": [0.01, 0.01, 0.01], "density": 0.3}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_staged_commands(tmp_path, cfg_file, capsys):
    out = str(tmp_path / "run")
    assert main(["train", "--config", str(cfg_file), "--out", out]) == 0
    assert main(["prune", "--out", out, "--density", "0.25"]) == 0
    assert main(["expand", "--out", out, "--klut", "3", "--pinputs", "1", "--tile", "2x2"]) == 0
    assert main(["export", "--out", out]) == 0
    assert main(["simulate", "--out", out]) == 0
    assert "0 mismatches" in capsys.readouterr().out
    assert main(["report", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "physical_luts" in text and "phase,epoch,loss" in text
    saved = json.loads((tmp_path / "run" / "config.json").read_text())
    assert saved["density"] == 0.25 and saved["tile"] == [2, 2]


def test_run_command(tmp_path, cfg_file):
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "r"), "--klut", "2"]) == 0
    assert (tmp_path / "r" / "lutnet.v").exists()


def test_errors(tmp_path, cfg_file, capsys):
    assert main(["expand", "--config", str(cfg_file), "--out", str(tmp_path / "empty")]) == 2
    assert "phase 2" in capsys.readouterr().err
    assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "x"), "--klut", "6",
                 "--pinputs", "5"]) == 2
    with pytest.raises(SystemExit):
        main(["expand", "--tile", "2by2"])
