"""Schedule construction and energy / latency / area estimation.

A schedule is a list of grouped steps.  Each step carries per-instance event
counts and latency plus a ``count``; totals are ``count`` times the
per-instance values.  Energy is always ``sum(events * catalog energy)`` so it
is linear in the catalog.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .arch import ArchConfig, COMPONENTS, CostCatalog, peak_throughput, step_latency
from .errors import ConfigurationError, ContractError
from .mapper import Placement
from .netgraph import NetworkGraph, Node, processing_order
from .vmm_core import VmmDesignPoint

STEP_KINDS = ("vmm", "aux", "mm-load", "mm-store")
#: element-wise AUX ops per hidden unit and LSTM time step (c = f*c + i*g; h = o*tanh(c))
LSTM_AUX_OPS = 5
DEFAULT_TOLERANCE = 0.30


@dataclass(frozen=True)
class Step:
    kind: str
    node: str
    count: int
    latency: float  # per instance, s
    events: dict  # component -> events per instance
    words: int = 0
    pes: int = 0
    layer: int = -1
    ops: float = 0.0  # per instance (2 per unpadded MAC)

    def energy(self, catalog: CostCatalog) -> dict:
        return {c: n * catalog[c].energy_per_event * self.count for c, n in self.events.items() if n}


@dataclass
class Schedule:
    cfg: ArchConfig
    steps: list = field(default_factory=list)
    name: str = ""

    @property
    def latency(self) -> float:
        return sum(s.latency * s.count for s in self.steps)

    @property
    def ops(self) -> float:
        return sum(s.ops * s.count for s in self.steps)

    @property
    def vmm_steps(self) -> int:
        return sum(s.count for s in self.steps if s.kind == "vmm")

    def events(self) -> dict:
        out = {}
        for s in self.steps:
            for c, n in s.events.items():
                out[c] = out.get(c, 0.0) + n * s.count
        return out

    def for_node(self, node: str) -> list:
        return [s for s in self.steps if s.node == node]


# ----------------------------------------------------------------------------
# Event models


def _beats(words: float, cfg: ArchConfig) -> int:
    return math.ceil(words / cfg.k)


def vmm_events(rows: int, cols: int, dp: VmmDesignPoint, cap_sharing: int = 1) -> dict:
    """Events of one VMM over ``rows`` inputs and ``cols`` signed outputs."""
    strings = rows * 2 * cols
    c0_ff = dp.c0 * 1e15
    ev = {
        "dtc": rows,
        "bsl": 3 * strings,  # rise and fall in phase I, one rise in phase II
        "wl": 2 * strings,  # target layer, then sweep layer
        "cap": 2 * cols * rows * c0_ff,
        "fm_cell": strings,
        "neuron": cols,
        "tdc": cols,
        "buffer_word": rows + cols,
    }
    if cap_sharing > 1:
        ev["cap_mux"] = 2 * cols
    return ev


def _controller(ev: dict, latency: float, cfg: ArchConfig) -> dict:
    ev = dict(ev)
    ev["controller"] = ev.get("controller", 0.0) + latency * cfg.clock
    return ev


class _ScheduleBuilder:
    def __init__(self, cfg: ArchConfig, catalog: CostCatalog, placement: Placement):
        self.cfg = cfg
        self.catalog = catalog
        self.by_kernel = placement.by_kernel() if placement is not None else {}
        self.steps = []
        lat = lambda c: catalog.entries[c].latency if c in catalog.entries else 0.0
        # exposed per-step overheads: control issue, output conversion, CAP multiplexing
        self.vmm_extra = lat("controller") + lat("tdc") + lat("neuron") + (
            lat("cap_mux") if cfg.cap_sharing > 1 else 0.0
        )
        self.aux_latency = lat("aux_op")
        self.mm_latency = lat("mm_word")

    # -- primitive steps
    def _emit(self, kind, node, count, latency, events, **kw):
        if count <= 0:
            return
        self.steps.append(Step(kind, node, int(count), latency, _controller(events, latency, self.cfg), **kw))

    def mm_transfer(self, kind, node, words, count=1, exposed=True):
        """MM read into the input buffer or MM write of outputs.

        The transfer overlaps the next layer selection, so only its excess
        over ``T_LS`` shows up as latency.
        """
        if words <= 0:
            return
        t = _beats(words, self.cfg) / self.cfg.clock + self.mm_latency
        latency = max(0.0, t - self.cfg.t_ls) if exposed else t
        ev = {"mm_word": words, "bus_word": words}
        if kind == "mm-load":
            ev["buffer_word"] = words
        self._emit(kind, node, count, latency, ev, words=int(words))

    def aux(self, node, ops, count=1, mm_words=0):
        if ops <= 0 and mm_words <= 0:
            return
        cycles = max(_beats(ops, self.cfg), _beats(mm_words, self.cfg))
        latency = cycles / self.cfg.clock + self.aux_latency
        ev = {"aux_op": ops}
        if mm_words:
            ev.update(mm_word=mm_words, bus_word=mm_words)
        self._emit("aux", node, count, latency, ev, words=int(mm_words))

    def vmm_pieces(self, node: Node, count: int, true_rows: int, true_cols: int):
        """VMM steps over every placed piece of ``node``, plus output stores and partial sums."""
        k = self.cfg.k
        pieces = self.by_kernel.get(node.id)
        if not pieces:
            raise ContractError(f"weighted node {node.id} has no placement")
        col_blocks = {}
        for pp in pieces:
            p = pp.piece
            rows, cols = p.rows * k, p.cols * k
            r_true = max(0, min(true_rows, (p.row0 + p.rows) * k) - p.row0 * k)
            c_true = max(0, min(true_cols, (p.col0 + p.cols) * k) - p.col0 * k)
            ev = vmm_events(rows, cols, self.cfg.dp, self.cfg.cap_sharing)
            lat = step_latency(self.cfg, extra=self.vmm_extra)
            self._emit("vmm", node.id, count, lat, ev, pes=p.area, layer=pp.layer, ops=2.0 * r_true * c_true)
            col_blocks.setdefault(p.col0, []).append((p.rows, c_true))
        for col0, parts in sorted(col_blocks.items()):
            c_true = parts[0][1]
            # the TDC accumulates up to accumulate_layers partial results
            extra_sums = math.ceil(len(parts) / self.cfg.accumulate_layers) - 1
            if extra_sums > 0:
                self.aux(node.id, extra_sums * c_true, count)
            self.mm_transfer("mm-store", node.id, c_true, count)

    # -- node kinds
    def fc(self, node: Node):
        chunk = 4 * self.cfg.m * self.cfg.k  # folded input buffer
        for start in range(0, node.inputs, chunk):
            self.mm_transfer("mm-load", node.id, min(chunk, node.inputs - start), node.seq_len)
        self.vmm_pieces(node, node.seq_len, node.inputs, node.outputs)

    def recurrent(self, node: Node):
        s = node.seq_len
        self.mm_transfer("mm-load", node.id, node.inputs - node.hidden, s)
        self.vmm_pieces(node, s, node.inputs, node.outputs)
        self.aux(node.id, LSTM_AUX_OPS * node.hidden, s)

    def conv(self, node: Node):
        c = node.conv
        oh, ow = c.out_h, c.out_w
        window = c.window_words
        new_cols = min(window, c.stride * c.kernel[0] * c.in_c)
        # row starts load the whole window; later pixels shift in new columns only
        self.mm_transfer("mm-load", node.id, window, oh)
        self.mm_transfer("mm-load", node.id, new_cols, oh * (ow - 1))
        self.vmm_pieces(node, oh * ow, node.inputs, node.outputs)
        if node.fused_add:
            self.aux(node.id, c.out_words, 1, mm_words=c.out_words)

    def pool(self, node: Node):
        c = node.conv
        if c is not None:
            ops = c.out_words * c.kernel[0] * c.kernel[1]
            self.aux(node.id, ops, 1, mm_words=c.in_words + c.out_words)
        else:
            self.aux(node.id, node.elements, 1, mm_words=2 * node.elements)

    def eltwise(self, node: Node, g: NetworkGraph):
        words = sum(_words(g, e.bytes) for e in g.in_edges(node.id)) + _words(g, g.output_bytes(node.id))
        self.aux(node.id, node.elements, 1, mm_words=words)


def _words(g: NetworkGraph, nbytes: int) -> int:
    return math.ceil(nbytes * 8 / g.word_bits)


def build_schedule(
    g: NetworkGraph, placement: Placement | None, cfg: ArchConfig, catalog: CostCatalog | None = None
) -> Schedule:
    """Turn a mapped graph into grouped VMM, AUX and MM steps in processing order."""
    catalog = catalog if catalog is not None else CostCatalog.load()
    b = _ScheduleBuilder(cfg, catalog, placement)
    for nid in processing_order(g):
        node = g.nodes[nid]
        if node.kind == "fc":
            b.fc(node)
        elif node.kind == "conv":
            b.conv(node)
        elif node.kind == "recurrent":
            b.recurrent(node)
        elif node.kind == "maxpool":
            b.pool(node)
        elif node.kind in ("eltwise-add", "eltwise-mul"):
            b.eltwise(node, g)
        # input, output and concat are addressing only
    return Schedule(cfg, b.steps, g.name)


# ----------------------------------------------------------------------------
# Area


def processor_area(cfg: ArchConfig, catalog: CostCatalog) -> dict:
    """Area per component in mm^2."""
    share = cfg.cap_sharing
    pes = cfg.m * 2 * cfg.n
    blocks = pes * share
    c0_ff = cfg.dp.c0 * 1e15
    units = {
        "cap": pes * 2 * cfg.k * cfg.k * c0_ff,
        "fm_cell": blocks * cfg.k * 2 * cfg.k,
        "wl": blocks * cfg.layers,
        "bsl": blocks * cfg.k,
        "dtc": cfg.m * cfg.k,
        "neuron": cfg.n * cfg.k,
        "tdc": cfg.n * cfg.k,
        "buffer_word": 4 * cfg.m * cfg.k + 2 * cfg.n * cfg.k,
        "bus_word": cfg.k,
        "aux_op": cfg.k,
        "mm_word": cfg.mm_bytes,
        "controller": 1,
    }
    if share > 1:
        units["cap_mux"] = pes
    return {c: n * catalog[c].area * 1e-6 for c, n in units.items()}


def stored_weight_mb(cfg: ArchConfig) -> float:
    return cfg.weight_capacity * cfg.weight_bits / 8 / 1e6


# ----------------------------------------------------------------------------
# Reports


@dataclass
class PerfReport:
    name: str
    energy: float  # J
    latency: float  # s
    ops: float
    area: float  # mm^2
    stored_mb: float
    peak_throughput: float  # Ops/s
    energy_breakdown: dict  # J
    area_breakdown: dict  # mm^2
    vmm_steps: int = 0

    @property
    def throughput(self) -> float:
        """Benchmark TOps/s."""
        return self.ops / self.latency / 1e12 if self.latency > 0 else 0.0

    @property
    def power(self) -> float:
        return self.energy / self.latency if self.latency > 0 else 0.0

    @property
    def ee(self) -> float:
        """TOps/J."""
        return self.throughput / self.power if self.power > 0 else 0.0

    @property
    def se(self) -> float:
        """MB/mm^2."""
        return self.stored_mb / self.area if self.area > 0 else 0.0

    @property
    def ce(self) -> float:
        """TOps/(s mm^2)."""
        return self.throughput / self.area if self.area > 0 else 0.0

    @property
    def energy_per_op(self) -> float:
        return self.energy / self.ops if self.ops > 0 else 0.0

    def energy_fractions(self) -> dict:
        total = sum(self.energy_breakdown.values())
        if total <= 0:
            return {c: 0.0 for c in self.energy_breakdown}
        return {c: v / total for c, v in self.energy_breakdown.items()}

    def area_fractions(self) -> dict:
        total = sum(self.area_breakdown.values())
        return {c: v / total for c, v in self.area_breakdown.items()} if total > 0 else {}

    def metrics(self) -> dict:
        return {
            "area_mm2": self.area,
            "power_w": self.power,
            "throughput_tops": self.throughput,
            "peak_throughput_tops": self.peak_throughput / 1e12,
            "ce_tops_per_s_mm2": self.ce,
            "se_mb_per_mm2": self.se,
            "ee_tops_per_j": self.ee,
            "energy_j": self.energy,
            "latency_s": self.latency,
            "ops": self.ops,
            "energy_per_op_j": self.energy_per_op,
            "vmm_steps": self.vmm_steps,
        }

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "metrics": self.metrics(),
            "energy_breakdown_j": self.energy_breakdown,
            "energy_fractions": self.energy_fractions(),
            "area_breakdown_mm2": self.area_breakdown,
            "area_fractions": self.area_fractions(),
        }

    def breakdown_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["component", "energy_j", "energy_fraction", "area_mm2", "area_fraction"])
        ef, af = self.energy_fractions(), self.area_fractions()
        for c in COMPONENTS:
            if c in self.energy_breakdown or c in self.area_breakdown:
                w.writerow([c, self.energy_breakdown.get(c, 0.0), ef.get(c, 0.0),
                            self.area_breakdown.get(c, 0.0), af.get(c, 0.0)])
        return buf.getvalue()


def estimate(schedule: Schedule, cfg: ArchConfig, catalog: CostCatalog) -> PerfReport:
    energy = {}
    for s in schedule.steps:
        for c, e in s.energy(catalog).items():
            energy[c] = energy.get(c, 0.0) + e
    area = processor_area(cfg, catalog)
    return PerfReport(
        name=schedule.name,
        energy=sum(energy.values()),
        latency=schedule.latency,
        ops=schedule.ops,
        area=sum(area.values()),
        stored_mb=stored_weight_mb(cfg),
        peak_throughput=peak_throughput(cfg),
        energy_breakdown=energy,
        area_breakdown=area,
        vmm_steps=schedule.vmm_steps,
    )


def single_step_report(
    cfg: ArchConfig,
    catalog: CostCatalog,
    rows: int | None = None,
    cols: int | None = None,
    include_static: bool = False,
) -> PerfReport:
    """Report for one isolated VMM step (full array by default).

    By default only the step's dynamic energy is counted; the per-cycle
    controller entry (control, instruction fetch, leakage) is left out.
    """
    from .netgraph import graph_from_dict
    from .mapper import pack, reshape_to_3d

    rows = cfg.m * cfg.k if rows is None else rows
    cols = cfg.n * cfg.k if cols is None else cols
    g = graph_from_dict({"name": f"step-{rows}x{cols}", "nodes": [{"id": "a", "kind": "fc", "inputs": rows, "outputs": cols}], "edges": []})
    placement = pack([reshape_to_3d("a", rows, cols, cfg)], cfg, iterations=1)
    b = _ScheduleBuilder(cfg, catalog, placement)
    b.vmm_pieces(g.nodes["a"], 1, rows, cols)
    steps = [s for s in b.steps if s.kind == "vmm"]
    if not include_static:
        steps = [replace(s, events={c: n for c, n in s.events.items() if c != "controller"}) for s in steps]
    sched = Schedule(cfg, steps, g.name)
    return estimate(sched, cfg, catalog)


# ----------------------------------------------------------------------------
# Standalone VMM block


@dataclass(frozen=True)
class BlockMetrics:
    m: int
    n: int
    energy_per_op: float  # J
    area_per_weight: float  # um^2
    throughput: float  # Ops/s
    energy_breakdown: dict  # J per VMM
    area_breakdown: dict  # um^2

    def energy_fractions(self) -> dict:
        total = sum(self.energy_breakdown.values())
        return {c: v / total for c, v in self.energy_breakdown.items()}

    def area_fractions(self) -> dict:
        total = sum(self.area_breakdown.values())
        return {c: v / total for c, v in self.area_breakdown.items()}


def vmm_block_metrics(
    m: int, n: int, dp: VmmDesignPoint, catalog: CostCatalog, layers: int = 64, t_ls: float = 25e-9
) -> BlockMetrics:
    """Energy per Op, area per weight and throughput of one ``m x n`` signed NAND block."""
    if m < 1 or n < 1:
        raise ContractError("block sizes must be >= 1")
    ev = vmm_events(m, n, dp)
    ev.pop("buffer_word")
    energy = {c: v * catalog[c].energy_per_event for c, v in ev.items()}
    c0_ff = dp.c0 * 1e15
    area = {
        "cap": 2 * n * m * c0_ff * catalog["cap"].area,
        "fm_cell": m * 2 * n * catalog["fm_cell"].area,
        "wl": layers * catalog["wl"].area,
        "bsl": m * catalog["bsl"].area,
        "dtc": m * catalog["dtc"].area,
        "neuron": n * catalog["neuron"].area,
        "tdc": n * catalog["tdc"].area,
    }
    ops = 2.0 * m * n
    latency = 2 * t_ls + dp.t_int + dp.t_out
    return BlockMetrics(
        m, n,
        energy_per_op=sum(energy.values()) / ops,
        area_per_weight=sum(area.values()) / (m * n * layers),
        throughput=ops / latency,
        energy_breakdown=energy,
        area_breakdown=area,
    )


# ----------------------------------------------------------------------------
# Reference comparison

_METRIC_KEYS = ("area_mm2", "power_w", "throughput_tops", "se_mb_per_mm2", "ee_tops_per_j", "ce_tops_per_s_mm2")


def load_references(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("acortex3d").joinpath("data/table2_reference.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)["rows"]


def reference_row(name: str, path: str | Path | None = None) -> dict:
    rows = load_references(path)
    if name not in rows:
        raise ConfigurationError(f"unknown reference {name!r}; known: {sorted(rows)}")
    return rows[name]


@dataclass(frozen=True)
class Deviation:
    metric: str
    value: float
    reference: float
    relative: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return abs(self.relative) <= self.tolerance


def compare_reference(report: PerfReport | dict, reference: dict) -> list:
    """Relative deviation per metric present in both report and reference."""
    metrics = report.metrics() if isinstance(report, PerfReport) else report
    tol_default = reference.get("tolerance", DEFAULT_TOLERANCE)
    tolerances = reference.get("tolerances", {})
    out = []
    for key in _METRIC_KEYS:
        if key not in reference.get("metrics", {}) or key not in metrics:
            continue
        ref = reference["metrics"][key]
        val = metrics[key]
        rel = (val - ref) / ref if ref != 0 else (0.0 if val == 0 else math.inf)
        out.append(Deviation(key, val, ref, rel, tolerances.get(key, tol_default)))
    return out
