import csv
import io
import json

import pytest

from ptd.cli import main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "d.csv"
    assert main(["gen", "--n-objects", "150", "--lmax", "40", "--inst-max", "4",
                 "--seed", "3", "--out", str(path)]) == 0
    return path


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_gen_is_deterministic(data, tmp_path):
    again = tmp_path / "again.csv"
    assert main(["gen", "--n-objects", "150", "--lmax", "40", "--inst-max", "4",
                 "--seed", "3", "--out", str(again)]) == 0
    assert again.read_bytes() == data.read_bytes()
    stub = json.loads((tmp_path / "again.csv.manifest.json").read_text())
    assert stub["objects"] == 150 and stub["command"] == "gen"


def test_gen_rejects_zero_objects(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--n-objects", "0", "--out", str(tmp_path / "x.csv")])
    assert exc.value.code == 2


def test_missing_dataset_exits_2(tmp_path, capsys):
    assert main(["oracle", "--data", str(tmp_path / "nope.csv")]) == 2
    assert "ptd gen" in capsys.readouterr().err


def test_single_server_query_equals_oracle(data, capsys):
    assert main(["query", "--data", str(data), "--servers", "1", "--k", "5", "--n-queries", "3"]) == 0
    q = _json(capsys)
    assert main(["oracle", "--data", str(data), "--k", "5", "--n-queries", "3"]) == 0
    o = _json(capsys)
    assert [r["answers"] for r in q["queries"]] == [r["answers"] for r in o["queries"]]


def test_query_schema(data, capsys):
    assert main(["query", "--data", str(data), "--servers", "3", "--k", "4",
                 "--query", "500,500", "--level", "0", "--serial"]) == 0
    doc = _json(capsys)
    assert {"version", "command", "config", "seed", "dataset", "dataset_sha256", "partitioning",
            "levels", "index_bytes", "queries", "averages"} <= set(doc)
    r = doc["queries"][0]
    assert set(r) == {"q", "answers", "ledger", "metrics"}
    assert r["q"] == [500.0, 500.0] and len(r["answers"]) == 4
    assert {"comm_bytes", "candidates", "pruning_power", "phase_seconds"} <= set(r["metrics"])


def test_bad_query_point(data, capsys):
    assert main(["query", "--data", str(data), "--query", "1,2,3"]) == 2


def test_manifest_rerun_reproduces_answers(data, tmp_path):
    first = tmp_path / "run.json"
    second = tmp_path / "rerun.json"
    assert main(["query", "--data", str(data), "--servers", "4", "--k", "6", "--n-queries", "2",
                 "--seed", "9", "--out", str(first)]) == 0
    assert main(["query", "--manifest", str(first), "--out", str(second)]) == 0
    a, b = json.loads(first.read_text()), json.loads(second.read_text())
    assert [r["answers"] for r in a["queries"]] == [r["answers"] for r in b["queries"]]
    assert [r["ledger"] for r in a["queries"]] == [r["ledger"] for r in b["queries"]]


def test_partition_index_and_levels(data, tmp_path, capsys):
    part = tmp_path / "p.csv"
    idx = tmp_path / "idx"
    assert main(["partition", "--data", str(data), "--servers", "3", "--out", str(part)]) == 0
    assert main(["index", "--data", str(data), "--partitioning", str(part), "--fanout", "4",
                 "--out-dir", str(idx)]) == 0
    meta = json.loads((idx / "index.json").read_text())
    assert meta["fanout"] == 4 and len(meta["partitions"]) == 3
    assert all((idx / lv["file"]).exists() for p in meta["partitions"] for lv in p["levels"])
    lv_path = tmp_path / "levels.json"
    assert main(["select-levels", "--data", str(data), "--partitioning", str(part), "--index", str(idx),
                 "--k", "3", "--n-workload", "4", "--out", str(lv_path)]) == 0
    assert set(json.loads(lv_path.read_text())["levels"]) == {"0", "1", "2"}
    capsys.readouterr()
    assert main(["query", "--data", str(data), "--partitioning", str(part), "--index", str(idx),
                 "--levels", str(lv_path), "--k", "3", "--n-queries", "1"]) == 0
    assert _json(capsys)["config"]["fanout"] == 4


def test_verify_small_campaign(capsys):
    assert main(["verify", "--configs", "2", "--max-objects", "80", "--seed", "1"]) == 0
    assert _json(capsys)["passed"] is True


def test_verify_catches_injected_fault(capsys):
    assert main(["verify", "--configs", "4", "--min-objects", "150", "--max-objects", "300",
                 "--break-lb"]) == 1
    capsys.readouterr()


def test_bench_sweep_and_empty_list(capsys):
    assert main(["bench", "--vary", "k", "--values", "", "--n-objects", "100"]) == 2
    capsys.readouterr()
    assert main(["bench", "--vary", "k", "--values", "1,3", "--n-objects", "120", "--servers", "2",
                 "--n-queries", "2"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert {r["value"] for r in rows} == {"1", "3"}
    assert {"wall_clock_s", "comm_bytes"} <= {r["metric"] for r in rows}


def test_bench_refuses_large_without_full(capsys):
    assert main(["bench", "--vary", "D", "--values", "50000"]) == 2


def test_cost_report_marks_selection(data, capsys):
    assert main(["cost-report", "--data", str(data), "--servers", "2", "--fanout", "4",
                 "--k", "3", "--n-workload", "4"]) == 0
    out = capsys.readouterr()
    rows = list(csv.DictReader(io.StringIO(out.out)))
    assert rows and set(rows[0]) == {"partition", "level", "est_C_l", "act_C_l", "est_scand",
                                     "act_scand", "selected"}
    for p in ("0", "1"):
        assert sum(int(r["selected"]) for r in rows if r["partition"] == p) == 1
    assert "spearman" in out.err
