import csv
import hashlib
import json
import subprocess
import sys

import jsonschema
import pytest

from qkmeans.cli import MEAN_FIELDS, main
from qkmeans.report import load_schema

SCHEMA = load_schema()


def rows_of(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.csv"
    assert main(["gen", "--n", "1000", "--k", "4", "--alpha", "1", "--po", "0", "--seed", "7",
                 "--min-sep", "30", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def outlier_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "o.csv"
    assert main(["gen", "--n", "2000", "--k", "2", "--po", "0.1", "--seed", "3", "--min-sep", "30",
                 "--out", str(path)]) == 0
    return path


def test_gen_example(tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert main(["gen", "--n", "1000", "--k", "4", "--alpha", "1", "--po", "0", "--seed", "7",
                 "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["cluster_sizes"] == [250] * 4
    assert summary["alpha_realized"] == 1.0 and summary["s_min"] == 250
    assert "Gamma_0.1" in summary
    again = tmp_path / "d2.csv"
    main(["gen", "--n", "1000", "--k", "4", "--alpha", "1", "--po", "0", "--seed", "7", "--out", str(again)])
    assert digest(out) == digest(again)


def test_gen_rejects_bad_alpha(tmp_path, capsys):
    code = main(["gen", "--n", "1000", "--k", "4", "--alpha", "0.5", "--out", str(tmp_path / "x.csv")])
    assert code == 2
    assert "alpha must be ≥ 1" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["run", "bogus", "x.csv"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    assert main(["run", "noiseless", str(tmp_path / "missing.csv")]) == 2
    assert main(["bounds", "dixie", "--alpha", "1"]) == 2
    assert "--k" in capsys.readouterr().err
    assert main(["--jobs", "0", "verify", "kl"]) == 2


def test_run_noiseless_rows(data, tmp_path):
    out = tmp_path / "r.jsonl"
    assert main(["run", "noiseless", str(data), "--delta", "0.1", "--eps", "0.1", "--trials", "100",
                 "--out", str(out)]) == 0
    rows = rows_of(out)
    assert len(rows) == 101
    for r in rows:
        jsonschema.validate(r, SCHEMA)
    trials, agg = rows[:-1], rows[-1]
    assert [r["rng_seed"] for r in trials] == list(range(100))
    assert agg["kind"] == "aggregate" and agg["success_fraction"] >= 0.9
    assert agg["bound_verdicts"]["mean_queries_le_query_bound"]
    # aggregate means recomputed from the trial rows
    for k in MEAN_FIELDS:
        vals = [r[k] for r in trials if r[k] is not None]
        assert agg["means"][k] == pytest.approx(sum(vals) / len(vals), rel=1e-12)


def test_run_outlier_accounting(outlier_data, tmp_path):
    out = tmp_path / "o.jsonl"
    assert main(["run", "outlier", str(outlier_data), "--delta", "0.2", "--eps", "0.2", "--gamma", "truth",
                 "--trials", "10", "--out", str(out)]) == 0
    rows = rows_of(out)
    for r in rows[:-1]:
        jsonschema.validate(r, SCHEMA)
        assert r["queries_phase1"] + r["queries_phase2"] == r["queries_total"]
        assert r["scale_mode"] is None
    assert rows[-1]["bound_verdicts"]["outlier_scores_perfect"]


def test_run_noisy_paper_scale_too_large(data, tmp_path, capsys):
    out = tmp_path / "n.jsonl"
    code = main(["--scale", "paper", "run", "noisy", str(data), "--trials", "2", "--out", str(out)])
    assert code == 1
    rows = rows_of(out)
    assert [r["kind"] for r in rows] == ["error", "error", "aggregate"]
    assert rows[0]["message"].startswith("M=") and "exceeds n=1000" in rows[0]["message"]
    assert "exceeds n" in capsys.readouterr().err
    for r in rows:
        jsonschema.validate(r, SCHEMA)


def test_run_noisy_desk(tmp_path):
    data, out = tmp_path / "n.csv", tmp_path / "n.jsonl"
    main(["gen", "--n", "3000", "--k", "3", "--seed", "4", "--min-sep", "30", "--out", str(data)])
    assert main(["run", "noisy", str(data), "--pe", "0.1", "--delta", "0.2", "--eps", "0.2",
                 "--trials", "2", "--out", str(out)]) == 0
    rows = rows_of(out)
    assert [r["kind"] for r in rows] == ["trial", "trial", "aggregate"]
    assert all(r["scale_mode"] == "desk" for r in rows[:-1])
    for r in rows:
        jsonschema.validate(r, SCHEMA)


def test_csv_export(data, tmp_path):
    out, table = tmp_path / "r.jsonl", tmp_path / "r.csv"
    main(["run", "noiseless", str(data), "--trials", "3", "--out", str(out), "--csv", str(table)])
    with open(table, newline="") as fh:
        got = list(csv.DictReader(fh))
    rows = rows_of(out)[:-1]
    assert len(got) == 3
    assert [int(g["queries_total"]) for g in got] == [r["queries_total"] for r in rows]


def test_jobs_do_not_change_rows(data, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    base = ["run", "noiseless", str(data), "--trials", "4", "--seed", "11"]
    main(base + ["--out", str(a)])
    main(["--jobs", "2"] + base + ["--out", str(b)])
    strip = lambda rs: [{k: v for k, v in r.items() if k != "wall_time_ms" and k != "means"} for r in rs]
    assert strip(rows_of(a)) == strip(rows_of(b))


@pytest.mark.parametrize("argv", [["verify", "kl"],
                                  ["verify", "centroid", "--m", "10", "--delta", "0.1", "--trials", "10000"],
                                  ["verify", "dixie", "--k", "5", "--m", "2"]])
def test_verify_examples(argv, tmp_path):
    out = tmp_path / "v.jsonl"
    assert main(argv + ["--out", str(out)]) == 0
    rows = rows_of(out)
    for r in rows:
        jsonschema.validate(r, SCHEMA)
    assert rows[-1]["kind"] == "verify_summary" and rows[-1]["pass"]
    if argv[1] == "centroid":
        assert all(r["rate_with"] >= 0.9 for r in rows[:-1])
    if argv[1] == "dixie":
        assert rows[0]["mean"] <= rows[0]["bound"]


def test_bounds_command(capsys):
    assert main(["bounds", "dixie", "--alpha", "1", "--k", "5", "--m", "2"]) == 0
    row = json.loads(capsys.readouterr().out)
    jsonschema.validate(row, SCHEMA)
    assert row["value"]["dixie_bound"] == pytest.approx(29.957, abs=1e-3)
    assert main(["bounds", "noisy-m", "--alpha", "1", "--k", "1", "--delta", "0.5", "--eps", "0.5",
                 "--pe", "0", "--scale", "paper"]) == 0
    assert json.loads(capsys.readouterr().out)["value"]["M"] == 866
    assert main(["bounds", "kl", "--x", "0.6", "--y", "0.5"]) == 2


@pytest.mark.parametrize("name,flags", [
    ("qkmwol", ["--alpha", "1", "--k", "2", "--delta", "0.5", "--eps", "0.5", "--po", "0"]),
    ("erlang", ["--alpha", "1", "--k", "1", "--po", "0", "--m", "2"]),
    ("noisy-outlier", ["--alpha", "1", "--k", "2", "--delta", "0.2", "--eps", "0.2", "--pe", "0.25", "--po", "0"]),
    ("noisy-outlier-alt", ["--alpha", "1", "--k", "2", "--delta", "0.2", "--eps", "0.2", "--pe", "0.25",
                           "--po", "0.1"]),
    ("min-cluster", ["--n", "1e6", "--k", "10", "--eps", "0.1"]),
])
def test_every_bound_name(name, flags, capsys):
    assert main(["bounds", name] + flags) == 0
    jsonschema.validate(json.loads(capsys.readouterr().out), SCHEMA)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "qkmeans", "bounds", "min-cluster", "--n", "1e7", "--k", "10",
                          "--eps", "0.1"], capture_output=True, text=True, check=True)
    assert json.loads(res.stdout)["value"]["min_cluster_threshold"] == pytest.approx(1e-3)
