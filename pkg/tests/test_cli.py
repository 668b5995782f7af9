import csv
import json

import pytest

from yieldboost.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "world.json").write_text(json.dumps({"n_counties": 12, "years": [2003, 2008], "seed": 4}))
    assert main(["generate", "--config", str(root / "world.json"), "--out", str(root / "w")]) == 0
    args = ["--cubes", str(root / "w" / "cubes"), "--yields", str(root / "w" / "yields.csv"),
            "--counties", str(root / "w" / "counties.csv")]
    assert main(["featurize", *args, "--out", str(root / "f.csv")]) == 0
    assert main(["featurize", *args, "--mode", "inyear", "--out", str(root / "fi.csv")]) == 0
    return root


def test_featurize_shapes(workspace):
    header = next(csv.reader(open(workspace / "f.csv")))
    assert len(header) == 1129 + 3
    assert len(next(csv.reader(open(workspace / "fi.csv")))) == 634 + 3


def test_train_predict_explain(workspace):
    (workspace / "p.json").write_text(json.dumps({"max_rounds": 10, "max_depth": 3}))
    assert main(["train", "--features", str(workspace / "f.csv"), "--params", str(workspace / "p.json"),
                 "--seed", "3", "--out", str(workspace / "m.json")]) == 0
    assert main(["predict", "--model", str(workspace / "m.json"), "--features", str(workspace / "f.csv"),
                 "--out", str(workspace / "pred.csv")]) == 0
    rows = list(csv.DictReader(open(workspace / "pred.csv")))
    assert len(rows) == 72 and set(rows[0]) == {"county_id", "year", "prediction", "label"}
    assert main(["explain", "--model", str(workspace / "m.json"), "--features", str(workspace / "f.csv"),
                 "--out", str(workspace / "s.csv"), "--groups", str(workspace / "g.json"),
                 "--svg", str(workspace / "g.svg")]) == 0
    assert json.loads((workspace / "g.json").read_text())[0]["importance"] > 0
    assert (workspace / "g.svg").read_text().startswith("<svg")


def test_tune_and_evaluate(workspace):
    (workspace / "space.json").write_text(json.dumps({"max_depth": {"type": "int_uniform", "low": 2, "high": 4}}))
    assert main(["tune", "--features", str(workspace / "f.csv"), "--space", str(workspace / "space.json"),
                 "--trials", "3", "--out", str(workspace / "best.json"), "--log", str(workspace / "t.jsonl")]) == 0
    assert 2 <= json.loads((workspace / "best.json").read_text())["max_depth"] <= 4
    assert len((workspace / "t.jsonl").read_text().splitlines()) == 3
    (workspace / "p.json").write_text(json.dumps({"max_rounds": 10}))
    assert main(["evaluate", "--features", str(workspace / "f.csv"), "--test-years", "2007:2008",
                 "--params", str(workspace / "p.json"), "--repeats", "2",
                 "--report", str(workspace / "r.json")]) == 0
    assert len(json.loads((workspace / "r.json").read_text())["years"]) == 2


def test_exit_codes(workspace, capsys):
    assert main(["train", "--features", str(workspace / "missing.csv"), "--out", str(workspace / "x.json")]) == 3
    assert main(["train", "--features", str(workspace / "world.json"), "--out", str(workspace / "x.json")]) == 2
    (workspace / "bad.json").write_text(json.dumps({"eta": 7}))
    assert main(["train", "--features", str(workspace / "f.csv"), "--params", str(workspace / "bad.json"),
                 "--out", str(workspace / "x.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["evaluate"])
    assert exc.value.code == 2
