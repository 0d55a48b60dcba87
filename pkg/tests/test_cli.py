import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from jumpswitch import cli
from jumpswitch.models import dump_config, preset
from jumpswitch.paths import load_batch


@pytest.fixture
def tiny(tmp_path):
    cfg = tmp_path / "tiny.json"
    dump_config({**preset("cl2d_lambda8").config, "steps": 6}, cfg)
    return ["--config", str(cfg), "--out", str(tmp_path / "run")], tmp_path / "run"


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_zero_paths_is_validation_error(tmp_path, capsys):
    code, _, err = run(["simulate", "--paths", "0", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert err.startswith("error category=validation message=")
    assert len(err.strip().splitlines()) == 1


def test_simulate_is_deterministic(tiny, capsys):
    base, out = tiny
    assert run(["simulate", "--paths", "300", "--seed", "7", *base], capsys)[0] == 0
    first = json.loads((out / "manifest.json").read_text())
    assert first["shape"] == [300, 7, 2]
    assert run(["simulate", "--paths", "300", "--seed", "7", *base], capsys)[0] == 0
    second = json.loads((out / "manifest.json").read_text())
    assert first["sha256"] == second["sha256"]
    assert second["argv"][0] == "simulate"
    b = load_batch(out / "paths.bin")
    assert b.seed == 7 and b.n_paths == 300


def test_pipeline(tiny, capsys):
    base, out = tiny
    train = ["--epochs", "1", "--batch-size", "128", *base]
    assert run(["simulate", "--paths", "512", "--seed", "3", *base], capsys)[0] == 0
    code, text, _ = run(["train", *train], capsys)
    assert code == 0 and text.startswith("values ")
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["values"]) == 3 and manifest["train_config"]["epochs"] == 1

    code, text, _ = run(["eval", "--paths", "400", *base], capsys)
    assert code == 0 and text.count("mode ") == 3
    rows = list(csv.DictReader(open(out / "outcomes.csv")))
    assert [r["mode_start"] for r in rows] == ["1", "2", "3"]
    assert json.loads((out / "manifest.json").read_text())["eval_seed"] == 4

    code, text, _ = run(["eval", "--paths", "400", "--eval-seed", "3", *base], capsys)
    assert code == 2
    assert run(["eval", "--paths", "400", "--eval-seed", "3", "--in-sample", *base],
               capsys)[0] == 0

    code, text, _ = run(["compare", "--degree", "2", *base], capsys)
    assert code == 0
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0] == "mode,osj,ls,difference,absolute_flag" and lines[-1].startswith("average")
    m = json.loads((out / "manifest.json").read_text())
    np.testing.assert_allclose(m["differences"],
                               np.abs(np.subtract(m["osj"], m["ls"])) / np.abs(m["ls"]))

    code, _, _ = run(["heatmap", "--step", "2", "--mode", "2", "--ranges", "40:60;4:8",
                      "--resolution", "7", *base], capsys)
    assert code == 0
    rows = (out / "heatmap_n2_i2.csv").read_text().splitlines()
    assert rows[0].startswith("# step=2,incumbent=2") and len(rows) == 2 + 49
    fractions = json.loads((out / "manifest.json").read_text())["fractions"]
    assert sum(fractions.values()) == pytest.approx(1.0)

    code, _, err = run(["heatmap", "--step", "2", "--ranges", "40:60", *base], capsys)
    assert code == 2 and "category=validation" in err


def test_train_is_reproducible(tiny, capsys):
    base, out = tiny
    train = ["--epochs", "1", "--batch-size", "128", *base]
    run(["simulate", "--paths", "256", *base], capsys)
    run(["train", *train], capsys)
    a = json.loads((out / "manifest.json").read_text())["values"]
    run(["train", *train], capsys)
    b = json.loads((out / "manifest.json").read_text())["values"]
    assert a == b


def test_missing_dataset_is_io_error(tmp_path, capsys):
    code, _, err = run(["train", "--out", str(tmp_path / "empty")], capsys)
    assert code == 2
    assert err.startswith("error category=io") and "simulate" in err


def test_missing_solution_is_io_error(tmp_path, capsys):
    code, _, err = run(["eval", "--paths", "10", "--out", str(tmp_path)], capsys)
    assert code == 2 and "category=io" in err


def test_linear_fit():
    fit = cli.linear_fit([2, 10, 20, 30], [1.0, 3.0, 5.5, 8.0])
    slope, intercept = np.polyfit([2, 10, 20, 30], [1.0, 3.0, 5.5, 8.0], 1)
    assert fit["slope"] == pytest.approx(slope) and fit["intercept"] == pytest.approx(intercept)
    assert 0.99 < fit["r2"] <= 1 and not fit["degenerate"]
    assert cli.linear_fit([2, 2], [1.0, 2.0])["degenerate"]
    assert cli.linear_fit([5], [1.0]) == {"slope": None, "intercept": 1.0, "r2": None,
                                          "degenerate": True}


def test_benchmark_single_dim_is_degenerate(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(cli.models, "CL_DEFAULTS", {**cli.models.CL_DEFAULTS, "steps": 4})
    monkeypatch.setitem(cli.models.PRESETS, "cl2d_lambda8",
                        {**cli.models.PRESETS["cl2d_lambda8"], "steps": 4})
    code, text, _ = run(["benchmark", "--dims", "3", "--paths", "600", "--epochs", "1",
                         "--batch-size", "200", "--out", str(tmp_path)], capsys)
    assert code == 0 and "fit degenerate" in text
    assert (tmp_path / "benchmark.csv").read_text().splitlines()[0] == "d,seconds,avg_difference"
    assert json.loads((tmp_path / "fit.json").read_text())["degenerate"] is True


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "jumpswitch.cli", "simulate", "--paths", "-3",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 2 and "category=validation" in res.stderr
