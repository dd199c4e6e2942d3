import json
import os

import pytest

from acortex3d import __version__
from acortex3d.cli import (
    EXIT_CAPACITY,
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    UsageError,
    atomic_write,
    main,
    parse_columns,
    parse_quantity,
)

from oracles import T1_C0_FF, T1_COLUMNS


def _run(tmp_path, *argv, sub="out"):
    out = tmp_path / sub
    return main([*argv, "--out", str(out)]), out


def _payload(path):
    return json.loads(path.read_text())


@pytest.mark.parametrize(
    "text, want",
    [("16ns", 16e-9), ("300nA", 300e-9), ("24fF", 24e-15), ("0.2V", 0.2), ("1e-9", 1e-9), ("25 ns", 25e-9), ("2k", 2000.0)],
)
def test_parse_quantity(text, want):
    assert parse_quantity(text) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("text", ["16xs", "ns", "", "1.2.3s", "5n"])
def test_parse_quantity_rejects(text):
    with pytest.raises(UsageError):
        parse_quantity(text)


def test_parse_columns():
    assert parse_columns("16ns:300nA,8ns:100nA") == [[16e-9, 300e-9], [8e-9, 100e-9]]
    with pytest.raises(UsageError):
        parse_columns("16ns")


def test_explore_default_table(tmp_path):
    code, out = _run(tmp_path, "explore")
    assert code == EXIT_OK
    doc = _payload(out / "explore.json")
    assert doc["tool"] == "acortex3d" and doc["version"] == __version__ and doc["seed"] == 0
    rows = doc["result"]["rows"]
    assert len(rows) == 9
    got = {(round(r["t_int"] * 1e9), round(r["i_max"] * 1e9)): r["c0"] for r in rows}
    for col, c0 in zip(T1_COLUMNS, T1_C0_FF):
        assert got[col] == pytest.approx(c0 * 1e-15, rel=1e-12)
    assert doc["result"]["optimal"] == {"t_int": 16e-9, "i_max": 300e-9}


def test_explore_single_column_with_units(tmp_path):
    code, out = _run(tmp_path, "explore", "--columns", "16ns:300nA", "--format", "csv")
    assert code == EXIT_OK
    text = (out / "explore.csv").read_text()
    assert text.startswith("# tool=acortex3d")
    assert "# config=" in text
    assert len([l for l in text.splitlines() if not l.startswith("#")]) == 2


def test_explore_empty_columns_is_usage_error(tmp_path):
    code, _ = _run(tmp_path, "explore", "--columns", ",")
    assert code == EXIT_USAGE


def test_bad_command_and_flag(tmp_path):
    assert main(["frobnicate"]) == EXIT_USAGE
    code, _ = _run(tmp_path, "simulate", "--trials", "many")
    assert code == EXIT_USAGE
    code, _ = _run(tmp_path, "simulate", "--t-int", "16xs")
    assert code == EXIT_USAGE


def test_simulate_flags_off_is_exact(tmp_path, capsys):
    code, out = _run(tmp_path, "simulate", "--trials", "5")
    assert code == EXIT_OK
    summary = _payload(out / "simulate.json")["result"]
    assert summary["max_error"] == 0.0


def test_simulate_all_flags_reaches_four_bits(tmp_path):
    code, out = _run(tmp_path, "simulate", "--all", "--trials", "200")
    assert code == EXIT_OK
    assert _payload(out / "simulate.json")["result"]["p0"] >= 4


def test_simulate_invalid_values(tmp_path):
    code, _ = _run(tmp_path, "simulate", "--trials", "0")
    assert code == EXIT_USAGE
    code, _ = _run(tmp_path, "simulate", "--layer", "99")
    assert code == EXIT_USAGE


def test_map_toy_graph(tmp_path):
    code, out = _run(tmp_path, "map")
    assert code == EXIT_OK
    doc = _payload(out / "map.json")
    assert doc["result"]["layers_used"] == 1
    assert (out / "placement" / "layer_000.csv").exists()


def _write_graph(path, rows, cols, count):
    nodes = [{"id": "in", "kind": "input"}, {"id": "out", "kind": "output"}]
    edges = []
    prev = "in"
    for i in range(count):
        nid = f"fc{i:03d}"
        nodes.append({"id": nid, "kind": "fc", "inputs": rows, "outputs": cols})
        edges.append({"src": prev, "dst": nid, "words": rows})
        prev = nid
    edges.append({"src": prev, "dst": "out", "words": cols})
    path.write_text(json.dumps({"name": "synthetic", "nodes": nodes, "edges": edges}))
    return path


def test_oversize_graph_is_capacity_error(tmp_path, capsys):
    g = _write_graph(tmp_path / "big.json", 2048, 1024, 65)
    code, _ = _run(tmp_path, "map", "--graph", str(g), "--iterations", "1")
    assert code == EXIT_CAPACITY
    assert "short by" in capsys.readouterr().err


def test_oversize_graph_fits_with_sharing(tmp_path):
    g = _write_graph(tmp_path / "big.json", 2048, 1024, 65)
    code, out = _run(tmp_path, "map", "--graph", str(g), "--iterations", "1", "--share", "2")
    assert code == EXIT_OK
    assert _payload(out / "map.json")["result"]["layers_available"] == 128


def test_malformed_graph_is_data_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{oops")
    code, _ = _run(tmp_path, "analyze-graph", "--graph", str(p))
    assert code == EXIT_DATA


def test_invalid_config_is_data_error(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("[1, 2")
    code, _ = _run(tmp_path, "explore", "--config", str(p))
    assert code == EXIT_DATA


def test_config_from_other_command_rejected(tmp_path):
    code, out = _run(tmp_path, "explore")
    code, _ = _run(tmp_path, "map", "--config", str(out / "explore.json"), sub="again")
    assert code == EXIT_USAGE


def test_analyze_graph(tmp_path):
    code, out = _run(tmp_path, "analyze-graph", "--graph", "inception-v1")
    assert code == EXIT_OK
    res = _payload(out / "analyze-graph.json")["result"]
    assert 0 < res["peak_bytes"] <= 1 << 20


def test_estimate_empty_graph_is_zero_report(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text(json.dumps({"nodes": [{"id": "i", "kind": "input"}, {"id": "o", "kind": "output"}],
                             "edges": [{"src": "i", "dst": "o", "bytes": 4}]}))
    code, out = _run(tmp_path, "estimate", "--graph", str(p))
    assert code == EXIT_OK
    m = _payload(out / "estimate.json")["result"]["metrics"]
    assert m["energy_j"] == 0 and m["ops"] == 0 and m["throughput_tops"] == 0


def test_estimate_with_reference_then_compare(tmp_path, capsys):
    code, out = _run(tmp_path, "estimate", "--graph", "gnmt-1024", "--iterations", "2", "--reference", "table2-baseline")
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert text.count("PASS") + text.count("FAIL") == 6
    code, out2 = _run(tmp_path, "compare", "--report", str(out / "estimate.json"), sub="cmp")
    assert code == EXIT_OK
    devs = _payload(out2 / "compare.json")["result"]["deviations"]
    assert {d["metric"] for d in devs} >= {"area_mm2", "power_w", "throughput_tops"}


def test_estimate_csv_has_breakdown(tmp_path):
    code, out = _run(tmp_path, "estimate", "--graph", "toy-chain", "--format", "csv")
    assert code == EXIT_OK
    assert (out / "estimate.csv").exists() and (out / "estimate_breakdown.csv").exists()


def test_compare_requires_report(tmp_path):
    code, _ = _run(tmp_path, "compare")
    assert code == EXIT_USAGE


@pytest.mark.parametrize(
    "argv, stem",
    [
        (["explore", "--seed", "3"], "explore"),
        (["simulate", "--all", "--trials", "50", "--seed", "7"], "simulate"),
        (["map", "--graph", "inception-v1", "--iterations", "3"], "map"),
        (["estimate", "--graph", "toy-chain"], "estimate"),
    ],
)
def test_rerun_from_embedded_config_is_identical(tmp_path, argv, stem):
    code, first = _run(tmp_path, *argv, sub="a")
    assert code == EXIT_OK
    code, second = _run(tmp_path, argv[0], "--config", str(first / f"{stem}.json"), sub="b")
    assert code == EXIT_OK
    assert (first / f"{stem}.json").read_bytes() == (second / f"{stem}.json").read_bytes()


def test_rerun_from_csv_output(tmp_path):
    code, first = _run(tmp_path, "explore", "--format", "csv", "--columns", "8ns:100nA", sub="a")
    code, second = _run(tmp_path, "explore", "--config", str(first / "explore.csv"), sub="b")
    assert code == EXIT_OK
    assert (first / "explore.csv").read_bytes() == (second / "explore.csv").read_bytes()


def test_atomic_write_leaves_no_temp(tmp_path):
    p = tmp_path / "d" / "x.txt"
    atomic_write(p, "one")
    atomic_write(p, "two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["x.txt"]
