import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from graphood.cli import load_checkpoint, main
from graphood.graph import load_dataset

FAST = ["--epochs", "25", "--hidden", "16", "--ub-start-epoch", "5"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "sbm.json"
    cfg.write_text(json.dumps({"num_blocks": 3, "nodes_per_block": 40, "p_in": 0.1, "p_out": 0.01, "seed": 2}))
    assert main(["generate", str(cfg), "-o", str(root / "base")]) == 0
    assert main(["make-ood", str(root / "base"), "-o", str(root / "ood"), "--kind", "structure",
                 "--frac-ood", "0.2", "--expose-fraction", "0.5", "--seed", "2"]) == 0
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_is_byte_identical(data):
    outs = [data / "t1", data / "t2"]
    for out in outs:
        assert main(["train", str(data / "ood"), "-o", str(out), "--method", "nodesafe", *FAST]) == 0
    for name in ("metrics.json", "scores.csv", "histogram.csv", "train_log.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_metrics_schema_and_round_trip(data):
    out = data / "schema"
    assert main(["train", str(data / "ood"), "-o", str(out), "--method", "gnnsafe", "--seed", "3", *FAST]) == 0
    text = (out / "metrics.json").read_text()
    doc = json.loads(text)
    assert {"method", "seed", "config", "auroc", "aupr", "fpr95", "id_accuracy", "n_id", "n_ood", "gamma"} <= set(doc)
    assert doc["method"] == "gnnsafe" and doc["seed"] == 3 and doc["config"]["epochs"] == 25
    assert doc["score_kind"] == "propagated-energy" and doc["positive_class"] == "id"
    assert doc["version"].startswith("v")
    assert json.dumps(doc, sort_keys=True, indent=2) + "\n" == text

    g = load_dataset(str(data / "ood"))
    rows = read_csv(out / "scores.csv")
    assert rows[0] == ["node", "score", "label", "role"] and len(rows) == g.num_nodes + 1
    hist = read_csv(out / "histogram.csv")
    assert hist[0] == ["bin_left", "bin_right", "count_id", "count_ood"] and len(hist) == 51
    s = np.array([float(r[1]) for r in rows[1:]])
    lefts = [float(r[0]) for r in hist[1:]]
    rights = [float(r[1]) for r in hist[1:]]
    both = np.r_[s[g.test_id], s[g.test_ood]]
    assert lefts[0] < both.min() and rights[-1] > both.max()
    assert sum(int(r[2]) for r in hist[1:]) == g.test_id.sum()
    assert sum(int(r[3]) for r in hist[1:]) == g.test_ood.sum() == doc["n_ood"]
    log = read_csv(out / "train_log.csv")
    assert len(log) == 26 and log[0][0] == "epoch"


def test_evaluate_reports_msp_provenance(data):
    assert main(["train", str(data / "ood"), "-o", str(data / "msp"), "--method", "msp", *FAST]) == 0
    assert main(["evaluate", str(data / "ood"), str(data / "msp" / "checkpoint.npz"), "-o", str(data / "msp_ev")]) == 0
    doc = json.loads((data / "msp_ev" / "metrics.json").read_text())
    assert doc["score_kind"] == "msp" and doc["method"] == "msp"
    assert (data / "msp_ev" / "metrics.json").read_bytes() == (data / "msp" / "metrics.json").read_bytes()
    params, meta = load_checkpoint(str(data / "msp" / "checkpoint.npz"))
    assert meta["config"]["method"] == "msp" and params.dims[2] == 3


def test_config_file_and_flag_override(data, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"method": "energy", "epochs": 10, "hidden": 8, "seed": 4}))
    assert main(["train", str(data / "ood"), "-o", str(tmp_path / "o"), "--config", str(cfg), "--seed", "5"]) == 0
    doc = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert doc["method"] == "energy" and doc["seed"] == 5 and doc["config"]["hidden"] == 8
    assert doc["score_kind"] == "raw-energy"


def test_compare_schema(data, capsys):
    seeds = ",".join(str(s) for s in range(10))
    out = data / "cmp"
    assert main(["compare", str(data / "ood"), "--methods", "gnnsafe,nodesafe", "--seeds", seeds,
                 "-o", str(out), "--epochs", "10", "--hidden", "8", "--ub-start-epoch", "2"]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 3 and printed[1].startswith("gnnsafe") and "±" in printed[1]
    doc = json.loads((out / "compare.json").read_text())
    assert [r["method"] for r in doc["rows"]] == ["gnnsafe", "nodesafe"]
    for row in doc["rows"]:
        assert row["runs"] == 10
        for k in ("auroc", "aupr", "fpr95", "id_accuracy"):
            assert 0 <= row[f"{k}_mean"] <= 1 and row[f"{k}_std"] >= 0
    table = read_csv(out / "compare.csv")
    assert len(table) == 3 and len(table[0]) == 2 + 4 * 2


def test_compare_jobs_match_sequential(data):
    args = ["--methods", "energy,gnnsafe", "--seeds", "0,1", "--epochs", "8", "--hidden", "8"]
    assert main(["compare", str(data / "ood"), "-o", str(data / "seq"), *args]) == 0
    assert main(["compare", str(data / "ood"), "-o", str(data / "par"), "--jobs", "2", *args]) == 0
    assert (data / "seq" / "compare.json").read_bytes() == (data / "par" / "compare.json").read_bytes()


@pytest.mark.parametrize("argv_tail, code", [
    (["--method", "bogus"], 2),
    (["--eta", "2"], 2),
    (["--epochs", "1.5"], 2),
    (["--method", "nodesafe-pp"], 3),
    (["--lr", "1e300", "--method", "gnnsafe", "--epochs", "5"], 4),
])
def test_exit_codes(data, tmp_path, argv_tail, code):
    ds = data / "ood" if code != 3 else data / "base"
    with np.errstate(all="ignore"):
        assert main(["train", str(ds), "-o", str(tmp_path / "x"), "--epochs", "3", *argv_tail]) == code


def test_exit_codes_for_files(data, tmp_path):
    assert main(["train", str(tmp_path / "missing"), "-o", str(tmp_path / "x")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", str(data / "ood"), "-o", str(tmp_path / "x"), "--config", str(bad)]) == 2
    bad.write_text('{"learning_rate": 0.1}')
    assert main(["train", str(data / "ood"), "-o", str(tmp_path / "x"), "--config", str(bad)]) == 2
    assert main(["evaluate", str(data / "ood"), str(tmp_path / "none.npz"), "-o", str(tmp_path / "x")]) == 3
    assert main(["compare", str(data / "ood"), "--methods", "msp,nope"]) == 2


def test_selfcheck_suite_selection(capsys):
    assert main(["selfcheck", "--suite", "metrics", "--suite", "shift"]) == 0
    out = capsys.readouterr().out
    assert "metric oracles" in out and "shift invariance" in out


def test_module_entry_point(data):
    r = subprocess.run([sys.executable, "-m", "graphood.cli", "selfcheck", "--suite", "metrics"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "ok" in r.stdout
