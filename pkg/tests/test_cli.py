import csv
import json
import subprocess
import sys

import pytest

from riskcal.cli import main


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def fixture_csv(tmp_path):
    out = tmp_path / "fx.csv"
    assert main(["gen-data", "--seed", "0", "--out", str(out)]) == 0
    return out


def test_gen_data(fixture_csv):
    rows = list(csv.reader(fixture_csv.open()))
    assert rows[0] == ["f0", "f1", "label"]
    assert len(rows) == 921
    tax = fixture_csv.with_name("fx.taxonomy.csv").read_text().splitlines()
    assert tax == ["class,superclass", "B1,0", "B2,0", "M1,1", "M2,1"]


def test_gen_data_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["gen-data", "--seed", "4", "--out", str(a)])
    main(["gen-data", "--seed", "4", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_train(tmp_path, fixture_csv, capsys):
    loss = write_json(tmp_path / "loss.json", {"kind": "rcl", "alpha": 5, "beta": 20})
    model, report = tmp_path / "m.json", tmp_path / "r.json"
    code = main([
        "train", "--data", str(fixture_csv), "--taxonomy", str(fixture_csv.with_name("fx.taxonomy.csv")),
        "--loss", str(loss), "--epochs", "3", "--seed", "1", "--lr", "0.01",
        "--out", str(model), "--report", str(report),
    ])
    assert code == 0
    assert "CER" in capsys.readouterr().out
    doc = json.loads(model.read_text())
    assert len(doc["history"]) == 3
    rep = json.loads(report.read_text())
    total = rep["correct_count"] + rep["visual_ambiguity_count"] + rep["type1_count"] + rep["type2_count"]
    assert total == 138


def test_train_bad_loss_exits_nonzero(tmp_path, fixture_csv, capsys):
    loss = write_json(tmp_path / "loss.json", {"kind": "rcl", "alpha": 30, "beta": 20})
    code = main([
        "train", "--data", str(fixture_csv), "--taxonomy", str(fixture_csv.with_name("fx.taxonomy.csv")),
        "--loss", str(loss), "--epochs", "1", "--seed", "0", "--out", str(tmp_path / "m.json"),
    ])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("riskcal train: error:") and "\n" not in err


def test_train_unknown_label(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("f0,label\n0.1,glioma\n0.2,XX\n")
    loss = write_json(tmp_path / "loss.json", {"kind": "ce"})
    code = main([
        "train", "--data", str(data), "--preset", "brainmri", "--loss", str(loss),
        "--epochs", "1", "--seed", "0", "--out", str(tmp_path / "m.json"),
    ])
    assert code == 1
    assert "line 3" in capsys.readouterr().err


def _spec(tmp_path, epochs=2):
    return write_json(tmp_path / "spec.json", {
        "dataset": {"scenario": "default-overlap"},
        "train": {"epochs": epochs, "learning_rate": 0.01},
        "losses": [{"name": "CE", "kind": "ce"}, {"name": "RCL", "kind": "rcl", "alpha": 5, "beta": 20}],
        "seeds": [0, 1],
        "baseline": "CE",
    })


def test_compare_and_tradeoff(tmp_path, capsys):
    spec = _spec(tmp_path)
    out, table, trade = tmp_path / "res.json", tmp_path / "t.csv", tmp_path / "trade.csv"
    assert main(["compare", "--spec", str(spec), "--out", str(out), "--table", str(table)]) == 0
    stdout = capsys.readouterr().out
    assert "RCL" in stdout and "vs CE" in stdout
    doc = json.loads(out.read_text())
    assert len(doc["runs"]) == 4
    assert len(table.read_text().splitlines()) == 5
    assert main(["tradeoff", "--results", str(out), "--out", str(trade)]) == 0
    lines = trade.read_text().splitlines()
    assert lines[0].startswith("#") and lines[1] == "name,f1_macro,cer_percent"
    assert len(lines) == 4


def test_ablate(tmp_path):
    spec = write_json(tmp_path / "spec.json", {
        "dataset": {"scenario": "default-overlap"},
        "train": {"epochs": 1, "learning_rate": 0.01},
        "losses": [{"name": "CE", "kind": "ce"}],
        "seeds": [0],
    })
    out = tmp_path / "abl.json"
    assert main(["ablate", "--spec", str(spec), "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["runs"]) == 11


def test_compare_missing_spec(tmp_path, capsys):
    assert main(["compare", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1
    assert "riskcal compare: error:" in capsys.readouterr().err


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "x.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "riskcal", "gen-data", "--seed", "1", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
