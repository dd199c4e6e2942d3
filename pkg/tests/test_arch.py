import json

import pytest
from hypothesis import given, settings, strategies as st

from acortex3d.arch import (
    REQUIRED,
    ArchConfig,
    CostCatalog,
    CostEntry,
    build_processor,
    cap_sharing_transform,
    core_latency,
    peak_throughput,
    plan_vmm_step,
    step_latency,
)
from acortex3d.errors import ConfigurationError, ContractError, DomainError
from acortex3d.vmm_core import VmmDesignPoint

CFG = ArchConfig()


def test_default_processor_shape():
    p = build_processor(CFG)
    assert p.max_vmm == (2048, 512)
    assert p.n_pes == 512
    assert p.n_dtc == 2048 and p.n_idu_outputs == 512
    assert p.weight_capacity == 134_217_728
    assert p.total_cells == 2 * p.weight_capacity


def test_unit_processor():
    cfg = ArchConfig(k=1, m=1, n=1, layers=1)
    assert build_processor(cfg).max_vmm == (1, 1)
    # the doubled grid and doubled tile width give two signed weights even here
    assert cfg.weight_capacity == (1 * 2 * 1 * 1 * 2 * 1) // 2 == 2


def test_accumulate_layers():
    assert CFG.accumulate_layers == 4


@pytest.mark.parametrize(
    "kw",
    [dict(k=0), dict(layers=0), dict(t_ls=10e-9), dict(t_ls=31e-9), dict(clock=0), dict(tdc_bits=5)],
)
def test_validation(kw):
    with pytest.raises(ConfigurationError):
        ArchConfig(**kw).validate()


def test_config_round_trip():
    cfg = ArchConfig(t_ls=20e-9, cap_sharing=4)
    assert ArchConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ConfigurationError):
        ArchConfig.from_dict({"bogus": 1})


def test_step_latency_examples():
    assert step_latency(CFG) == pytest.approx(84e-9)
    fast = ArchConfig(t_ls=20e-9, dp=VmmDesignPoint(8e-9, 100e-9))
    assert step_latency(fast) == pytest.approx(62e-9)
    assert core_latency(CFG) == pytest.approx(step_latency(CFG))


def test_zero_select_time_leaves_compute_phases():
    # bypass validation to probe the formula at T_LS = 0
    cfg = ArchConfig.__new__(ArchConfig)
    object.__setattr__(cfg, "__dict__", {**CFG.__dict__, "t_ls": 0.0})
    assert step_latency(cfg) == pytest.approx(CFG.dp.t_int + CFG.dp.t_out)


def test_transfer_excess_is_exposed():
    assert step_latency(CFG, load_time=40e-9) == pytest.approx(84e-9 + 15e-9)
    assert step_latency(CFG, load_time=10e-9, store_time=20e-9) == pytest.approx(84e-9)


def test_peak_throughput():
    slow = ArchConfig(t_ls=30e-9)
    assert peak_throughput(slow) / 1e12 == pytest.approx(22.3, abs=0.05)
    assert peak_throughput(CFG, 0) == 0.0
    with pytest.raises(ContractError):
        peak_throughput(CFG, CFG.m * CFG.n + 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 255), st.floats(20e-9, 30e-9), st.floats(20e-9, 30e-9))
def test_throughput_monotone(pes, a, b):
    lo, hi = sorted((a, b))
    fast, slow = ArchConfig(t_ls=lo), ArchConfig(t_ls=hi)
    assert peak_throughput(fast, pes) >= peak_throughput(slow, pes)
    assert peak_throughput(fast, pes) <= peak_throughput(fast, pes + 1)


def test_plan_small_step():
    plan = plan_vmm_step(CFG, 100, 100, 5)
    assert (plan.input_tiles, plan.output_tiles) == (2, 2)
    assert len(plan.enabled_pes) == 4
    one = plan_vmm_step(CFG, 1, 1, 0)
    assert one.enabled_pes == frozenset({(0, 0)})


def test_plan_latency_bound():
    plan = plan_vmm_step(CFG, 2048, 512, 63)
    assert plan.total_latency >= step_latency(CFG) - 1e-15
    assert list(plan.phases) == ["enable", "load_select", "phase_I", "sweep_select", "digitize", "activate_store"]


@pytest.mark.parametrize("rows, cols, layer", [(2049, 1, 0), (1, 513, 0), (0, 1, 0), (1, 1, 64)])
def test_plan_rejects(rows, cols, layer):
    with pytest.raises(ContractError):
        plan_vmm_step(CFG, rows, cols, layer)


def test_plan_tile_offset_outside_grid():
    with pytest.raises(ContractError):
        plan_vmm_step(CFG, 64, 64, 0, row_tile=32)


@pytest.mark.parametrize("share", [1, 2, 16])
def test_cap_sharing_scales_capacity(share):
    shared = cap_sharing_transform(CFG, share)
    assert shared.weight_capacity == share * CFG.weight_capacity
    assert shared.effective_layers == 64 * share
    assert plan_vmm_step(shared, 1, 1, 64 * share - 1).layer == 64 * share - 1


def test_cap_sharing_rejects_zero():
    with pytest.raises(ConfigurationError):
        cap_sharing_transform(CFG, 0)


def test_catalog_loads_and_reports_missing():
    cat = CostCatalog.load()
    for name in REQUIRED:
        assert cat[name].energy_per_event >= 0
    broken = cat.to_dict()
    del broken["components"]["tdc"]
    with pytest.raises(ConfigurationError):
        CostCatalog.from_dict(broken)


def test_catalog_scaling():
    cat = CostCatalog.load()
    twice = cat.scaled(energy=2.0)
    assert twice["wl"].energy_per_event == 2 * cat["wl"].energy_per_event
    assert twice["wl"].area == cat["wl"].area


def test_cost_entry_rejects_negative():
    with pytest.raises((DomainError, ConfigurationError)):
        CostEntry(-1.0, 1.0)
