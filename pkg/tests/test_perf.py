import csv
import io
import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from acortex3d.arch import ArchConfig, CostCatalog, cap_sharing_transform, peak_throughput
from acortex3d.errors import ConfigurationError, ContractError
from acortex3d.mapper import kernels_for_graph, pack
from acortex3d.netgraph import graph_from_dict
from acortex3d.perf import (
    Schedule,
    build_schedule,
    compare_reference,
    estimate,
    processor_area,
    reference_row,
    single_step_report,
    stored_weight_mb,
    vmm_block_metrics,
    vmm_events,
)
from acortex3d.vmm_core import VmmDesignPoint

CFG = ArchConfig()
CAT = CostCatalog.load()
DP = CFG.dp


def _fc_graph(rows, cols, seq_len=1):
    return graph_from_dict(
        {
            "name": "fc",
            "nodes": [
                {"id": "in", "kind": "input"},
                {"id": "fc", "kind": "fc", "inputs": rows, "outputs": cols, "seq_len": seq_len},
                {"id": "out", "kind": "output"},
            ],
            "edges": [{"src": "in", "dst": "fc", "words": rows}, {"src": "fc", "dst": "out", "words": cols}],
        }
    )


def _conv_graph(hw=8, c_in=16, c_out=32, k=3, stride=1, pad=1):
    conv = {"in_h": hw, "in_w": hw, "in_c": c_in, "out_c": c_out, "kernel": k, "stride": stride, "padding": pad}
    out_hw = (hw + 2 * pad - k) // stride + 1
    return graph_from_dict(
        {
            "name": "conv",
            "nodes": [
                {"id": "in", "kind": "input"},
                {"id": "cv", "kind": "conv", "conv": conv},
                {"id": "out", "kind": "output"},
            ],
            "edges": [
                {"src": "in", "dst": "cv", "words": hw * hw * c_in},
                {"src": "cv", "dst": "out", "words": out_hw * out_hw * c_out},
            ],
        }
    )


def _schedule(g, cfg=CFG, cat=CAT):
    return build_schedule(g, pack(kernels_for_graph(g, cfg), cfg, iterations=2), cfg, cat)


def test_small_fc_schedule_shape():
    s = _schedule(_fc_graph(100, 50))
    assert [st.kind for st in s.steps] == ["mm-load", "vmm", "mm-store"]
    assert s.ops == 2 * 100 * 50


def test_split_fc_accumulates_in_tdc():
    s = _schedule(_fc_graph(4 * 2048, 512))
    kinds = [st.kind for st in s.steps]
    assert kinds.count("vmm") == 4 and s.vmm_steps == 4
    assert kinds.count("mm-store") == 1
    assert "aux" not in kinds


def test_more_row_pieces_than_tdc_depth_need_aux_sums():
    s = _schedule(_fc_graph(5 * 2048, 512))
    assert s.vmm_steps == 5
    assert [st.kind for st in s.steps].count("aux") == 1


def test_padding_macs_excluded_from_ops():
    s = _schedule(_fc_graph(65, 3))
    (vmm,) = [st for st in s.steps if st.kind == "vmm"]
    assert vmm.ops == 2 * 65 * 3
    assert vmm.events["dtc"] == 128


def test_conv_reuse():
    g = _conv_graph()
    s = _schedule(g)
    assert s.vmm_steps == 64
    reads = sum(st.words * st.count for st in s.steps if st.kind == "mm-load")
    assert reads < 64 * g.nodes["cv"].conv.window_words


def test_recurrent_loops_over_sequence():
    g = graph_from_dict(
        {
            "nodes": [
                {"id": "in", "kind": "input"},
                {"id": "lstm", "kind": "recurrent", "inputs": 64, "hidden": 64, "seq_len": 7},
                {"id": "out", "kind": "output"},
            ],
            "edges": [{"src": "in", "dst": "lstm", "words": 64}, {"src": "lstm", "dst": "out", "words": 64}],
        }
    )
    s = _schedule(g)
    assert s.vmm_steps == 7
    assert all(st.count == 7 for st in s.steps)


def test_unplaced_node_is_contract_error():
    with pytest.raises(ContractError):
        build_schedule(_fc_graph(10, 10), None, CFG, CAT)


def test_empty_schedule_gives_zero_report():
    r = estimate(Schedule(CFG, [], "empty"), CFG, CAT)
    assert r.energy == 0 and r.latency == 0 and r.ops == 0
    assert r.throughput == 0 and r.power == 0 and r.ee == 0


def test_energy_linear_in_catalog():
    s = _schedule(_conv_graph())
    base = estimate(s, CFG, CAT).energy
    assert estimate(s, CFG, CAT.scaled(energy=2.0)).energy == pytest.approx(2 * base, rel=1e-12)


def test_missing_catalog_entry():
    shared = cap_sharing_transform(CFG, 2)
    entries = {k: v for k, v in CAT.entries.items() if k != "cap_mux"}
    cat = CostCatalog(entries, "no mux")
    with pytest.raises(ConfigurationError):
        processor_area(shared, cat)
    with pytest.raises(ConfigurationError):
        CostCatalog({k: v for k, v in CAT.entries.items() if k != "wl"})


def test_report_identities():
    r = estimate(_schedule(_conv_graph()), CFG, CAT)
    assert r.ee == pytest.approx(r.throughput / r.power, rel=1e-12)
    assert r.ce == pytest.approx(r.throughput / r.area, rel=1e-12)
    assert sum(r.energy_fractions().values()) == pytest.approx(1.0, abs=1e-9)
    assert sum(r.area_fractions().values()) == pytest.approx(1.0, abs=1e-9)
    assert r.se * r.area == pytest.approx(stored_weight_mb(CFG), rel=1e-12)
    assert all(v >= 0 for v in r.energy_breakdown.values())


def test_breakdown_csv():
    r = estimate(_schedule(_fc_graph(100, 50)), CFG, CAT)
    rows = list(csv.DictReader(io.StringIO(r.breakdown_csv())))
    assert {row["component"] for row in rows} >= {"cap", "wl", "bsl", "dtc"}
    assert sum(float(row["energy_fraction"]) for row in rows) == pytest.approx(1.0)


def test_step_latency_bound():
    s = _schedule(_fc_graph(2048, 512))
    (vmm,) = [st for st in s.steps if st.kind == "vmm"]
    assert vmm.latency >= 2 * CFG.t_ls + DP.t_int + DP.t_out


@settings(max_examples=20, deadline=None)
@given(st.floats(20e-9, 30e-9), st.floats(20e-9, 30e-9))
def test_latency_monotone_in_t_ls(a, b):
    lo, hi = sorted((a, b))
    g = _fc_graph(3000, 700)
    fast, slow = replace(CFG, t_ls=lo), replace(CFG, t_ls=hi)
    assert _schedule(g, fast).latency <= _schedule(g, slow).latency


def test_latency_monotone_in_graph_size():
    assert _schedule(_fc_graph(100, 50, 2)).latency < _schedule(_fc_graph(100, 50, 3)).latency
    assert _schedule(_conv_graph(hw=8)).latency < _schedule(_conv_graph(hw=12)).latency


def test_single_step_energy_per_op_band():
    r = single_step_report(CFG, CAT)
    assert 9e-15 <= r.energy_per_op <= 11e-15
    assert r.ops == 2 * 2048 * 512
    assert single_step_report(CFG, CAT, include_static=True).energy > r.energy


def test_peak_throughput_reported():
    r = single_step_report(CFG, CAT)
    assert r.peak_throughput == peak_throughput(CFG)


def test_vmm_events_scale():
    ev = vmm_events(10, 4, DP)
    assert ev["wl"] == 2 * 80 and ev["bsl"] == 3 * 80
    assert ev["cap"] == pytest.approx(2 * 4 * 10 * 24)
    assert "cap_mux" not in ev and vmm_events(10, 4, DP, 2)["cap_mux"] == 8


def test_block_trends():
    small = vmm_block_metrics(1, 1, DP, CAT)
    big = vmm_block_metrics(500, 500, DP, CAT)
    assert small.energy_per_op > big.energy_per_op
    assert small.area_per_weight > big.area_per_weight
    assert 9e-15 <= big.energy_per_op <= 11e-15
    sizes = [10, 50, 100, 500]
    epo = [vmm_block_metrics(s, s, DP, CAT).energy_per_op for s in sizes]
    assert epo == sorted(epo, reverse=True)


def test_block_breakdowns():
    big = vmm_block_metrics(500, 500, DP, CAT)
    af = big.area_fractions()
    assert af["cap"] == max(af.values())
    ef = big.energy_fractions()
    assert ef["wl"] + ef["bsl"] > 0.5
    with pytest.raises(ContractError):
        vmm_block_metrics(0, 5, DP, CAT)


def test_compare_reference_self_is_zero():
    r = estimate(_schedule(_fc_graph(100, 50)), CFG, CAT)
    ref = {"metrics": r.metrics(), "tolerance": 0.3}
    devs = compare_reference(r, ref)
    assert len(devs) == 6
    assert all(d.relative == 0 and d.ok for d in devs)


def test_reference_rows_shipped():
    row = reference_row("table2-baseline")
    assert row["metrics"]["area_mm2"] == 18.43
    with pytest.raises(ConfigurationError):
        reference_row("nope")


def test_cap_sharing_multiplies_storage_and_adds_mux_area():
    shared = cap_sharing_transform(CFG, 16)
    a0, a16 = processor_area(CFG, CAT), processor_area(shared, CAT)
    assert "cap_mux" in a16 and "cap_mux" not in a0
    assert a16["cap"] == a0["cap"]
    assert stored_weight_mb(shared) == 16 * stored_weight_mb(CFG)
    assert math.isclose(stored_weight_mb(CFG), 134_217_728 * 0.5 / 1e6)
