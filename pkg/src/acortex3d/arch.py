"""Structural model of the 3D-aCortex processor and its per-component cost catalog.

The PE grid has ``M`` rows and ``2N`` columns.  Each PE holds a ``K x 2K``
cell NAND block (``K`` inputs, ``K`` differential outputs) on ``L`` layers,
so one layer of one PE is one K-tile of signed weights.  A single VMM step
can drive up to ``M*K`` inputs and ``N*K`` signed outputs (the IDU count).
With CAP sharing, ``share`` NAND blocks hang off each PE's capacitor bank
and behave like ``share * L`` selectable layers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError, ContractError
from .vmm_core import VmmDesignPoint

T_LS_RANGE = (20e-9, 30e-9)

#: Phases of one VMM step, in execution order.
PHASES = ("enable", "load_select", "phase_I", "sweep_select", "digitize", "activate_store")


@dataclass(frozen=True)
class ArchConfig:
    k: int = 64
    m: int = 32
    n: int = 8
    layers: int = 64
    cap_sharing: int = 1
    clock: float = 1e9
    input_bits: int = 4
    tdc_bits: int = 6
    weight_bits: int = 4
    mm_bytes: int = 1 << 20
    im_bytes: int = 4 << 10
    t_ls: float = 25e-9
    dp: VmmDesignPoint = field(default_factory=lambda: VmmDesignPoint(16e-9, 300e-9))

    def validate(self) -> "ArchConfig":
        for name in ("k", "m", "n", "layers", "cap_sharing", "input_bits", "weight_bits"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.clock <= 0 or self.mm_bytes <= 0 or self.im_bytes <= 0:
            raise ConfigurationError("clock and memory sizes must be positive")
        lo, hi = T_LS_RANGE
        if not lo <= self.t_ls <= hi:
            raise ConfigurationError(f"T_LS {self.t_ls:g} s outside [{lo:g}, {hi:g}]")
        if self.tdc_bits < self.input_bits + 2:
            raise ConfigurationError("tdc_bits must leave two guard bits for 4-layer accumulation")
        return self

    @property
    def accumulate_layers(self) -> int:
        """Partial results the TDC can sum without overflow."""
        return 2 ** (self.tdc_bits - self.input_bits)

    @property
    def effective_layers(self) -> int:
        return self.layers * self.cap_sharing

    @property
    def grid_tiles(self) -> tuple[int, int]:
        """K-tile grid of one layer, ``(rows, cols)``."""
        return self.m, 2 * self.n

    @property
    def max_piece_tiles(self) -> tuple[int, int]:
        """Largest one-step VMM in K-tiles."""
        return self.m, self.n

    @property
    def cells_per_pe(self) -> int:
        return self.k * 2 * self.k * self.layers * self.cap_sharing

    @property
    def total_cells(self) -> int:
        return self.m * 2 * self.n * self.cells_per_pe

    @property
    def weight_capacity(self) -> int:
        """Signed weights (two cells each)."""
        return self.total_cells // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dp"] = self.dp.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown arch fields: {sorted(unknown)}")
        if "dp" in d and isinstance(d["dp"], dict):
            d["dp"] = VmmDesignPoint(**d["dp"])
        return cls(**d).validate()


@dataclass(frozen=True)
class Processor:
    cfg: ArchConfig
    pe_rows: int
    pe_cols: int
    n_pes: int
    n_dtc: int
    n_idu_outputs: int
    max_vmm: tuple[int, int]
    total_cells: int
    weight_capacity: int
    cells_per_pe: int


def build_processor(cfg: ArchConfig) -> Processor:
    cfg.validate()
    return Processor(
        cfg=cfg,
        pe_rows=cfg.m,
        pe_cols=2 * cfg.n,
        n_pes=cfg.m * 2 * cfg.n,
        n_dtc=cfg.m * cfg.k,
        n_idu_outputs=cfg.n * cfg.k,
        max_vmm=(cfg.m * cfg.k, cfg.n * cfg.k),
        total_cells=cfg.total_cells,
        weight_capacity=cfg.weight_capacity,
        cells_per_pe=cfg.cells_per_pe,
    )


def core_latency(cfg: ArchConfig) -> float:
    """Two layer selections plus both compute phases."""
    return 2 * cfg.t_ls + cfg.dp.t_int + cfg.dp.t_out


def step_latency(cfg: ArchConfig, load_time: float = 0.0, store_time: float = 0.0, extra: float = 0.0) -> float:
    """Latency of one VMM step.

    The MM read for this step and the MM write of the previous step both
    overlap the target-layer selection, so only their excess over ``T_LS``
    is exposed.  ``extra`` is added unconditionally (enable, activation).
    """
    select = max(cfg.t_ls, load_time, store_time)
    return select + cfg.dp.t_int + cfg.t_ls + cfg.dp.t_out + extra


def peak_throughput(cfg: ArchConfig, enabled_pes: int | None = None) -> float:
    """Ops/s with ``enabled_pes`` of the ``M x N`` one-step PEs active (all by default)."""
    full = cfg.m * cfg.n
    if enabled_pes is None:
        enabled_pes = full
    if not 0 <= enabled_pes <= full:
        raise ContractError(f"enabled PEs must be within [0, {full}]")
    macs = enabled_pes * cfg.k * cfg.k
    return 2.0 * macs / step_latency(cfg)


@dataclass(frozen=True)
class VmmStepPlan:
    enabled_pes: frozenset
    layer: int
    input_tiles: int
    output_tiles: int
    phases: dict

    @property
    def total_latency(self) -> float:
        return sum(self.phases.values())


def plan_vmm_step(
    cfg: ArchConfig,
    rows_needed: int,
    cols_needed: int,
    layer: int,
    row_tile: int = 0,
    col_tile: int = 0,
    load_words: int | None = None,
    store_words: int | None = None,
    enable_time: float = 0.0,
    activate_time: float = 0.0,
) -> VmmStepPlan:
    """Enable the PEs covering a ``rows x cols`` signed VMM and time its six phases."""
    max_r, max_c = cfg.m * cfg.k, cfg.n * cfg.k
    if rows_needed < 1 or cols_needed < 1:
        raise ContractError("a VMM step needs at least one row and one column")
    if rows_needed > max_r or cols_needed > max_c:
        raise ContractError(
            f"{rows_needed}x{cols_needed} exceeds the one-step limit {max_r}x{max_c}; split it first"
        )
    if not 0 <= layer < cfg.effective_layers:
        raise ContractError(f"layer {layer} outside [0, {cfg.effective_layers - 1}]")
    rt = math.ceil(rows_needed / cfg.k)
    ct = math.ceil(cols_needed / cfg.k)
    grid_r, grid_c = cfg.grid_tiles
    if row_tile + rt > grid_r or col_tile + ct > grid_c:
        raise ContractError("tile offset places the step outside the PE grid")
    pes = frozenset((row_tile + r, col_tile + c) for r in range(rt) for c in range(ct))
    beat = 1.0 / cfg.clock
    load = math.ceil((rows_needed if load_words is None else load_words) / cfg.k) * beat
    store = math.ceil((cols_needed if store_words is None else store_words) / cfg.k) * beat
    phases = {
        "enable": enable_time,
        "load_select": max(cfg.t_ls, load),
        "phase_I": cfg.dp.t_int,
        "sweep_select": cfg.t_ls,
        "digitize": cfg.dp.t_out,
        "activate_store": activate_time + store,
    }
    return VmmStepPlan(pes, layer, rt, ct, phases)


def cap_sharing_transform(cfg: ArchConfig, share: int = 16) -> ArchConfig:
    """Attach ``share`` NAND blocks to every PE capacitor bank."""
    if share < 1:
        raise ConfigurationError(f"share must be >= 1, got {share}")
    return replace(cfg, cap_sharing=share).validate()


# ----------------------------------------------------------------------------
# Cost catalog

#: component -> (event that energy_per_event refers to, instance that area refers to)
COMPONENTS = {
    "dtc": ("input conversion", "input channel (M*K)"),
    "bsl": ("bit-select edge per string", "level shifter (K per NAND block)"),
    "wl": ("layer selection per cell of the plate", "word-line driver (L per NAND block)"),
    "cap": ("fF of load capacitance cycled", "fF of load capacitance"),
    "fm_cell": ("selected cell read", "string footprint (all layers)"),
    "neuron": ("signed output per step", "neuron (N*K)"),
    "tdc": ("signed output conversion incl. activation", "TDC + activation (N*K)"),
    "buffer_word": ("word written into a buffer", "buffer word"),
    "bus_word": ("word moved on a K-word bus", "bus lane (K)"),
    "mm_word": ("main-memory word access", "main-memory byte"),
    "aux_op": ("element-wise digital op", "AUX lane (K)"),
    "controller": ("clock cycle (control, IM fetch, leakage)", "controller + instruction memory"),
    "cap_mux": ("single-ended column per step with shared CAP", "CAP multiplexer per PE"),
}

REQUIRED = tuple(c for c in COMPONENTS if c != "cap_mux")


@dataclass(frozen=True)
class CostEntry:
    energy_per_event: float  # J
    area: float  # um^2
    latency: float = 0.0  # s

    def __post_init__(self):
        if min(self.energy_per_event, self.area, self.latency) < 0:
            raise ConfigurationError("catalog entries must be nonnegative")


@dataclass(frozen=True)
class CostCatalog:
    entries: dict
    label: str = ""

    def __post_init__(self):
        missing = [c for c in REQUIRED if c not in self.entries]
        if missing:
            raise ConfigurationError(f"cost catalog is missing entries: {missing}")

    def __getitem__(self, name: str) -> CostEntry:
        try:
            return self.entries[name]
        except KeyError:
            raise ConfigurationError(f"cost catalog has no entry {name!r}") from None

    def scaled(self, energy: float = 1.0, area: float = 1.0, latency: float = 1.0) -> "CostCatalog":
        return CostCatalog(
            {
                k: CostEntry(e.energy_per_event * energy, e.area * area, e.latency * latency)
                for k, e in self.entries.items()
            },
            self.label,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "CostCatalog":
        try:
            entries = {k: CostEntry(**v) for k, v in d["components"].items()}
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed cost catalog: {exc}") from None
        return cls(entries, d.get("label", ""))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "CostCatalog":
        if path is None:
            text = resources.files("acortex3d").joinpath("data/catalog_calibrated.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "units": {"energy_per_event": "J", "area": "um^2", "latency": "s"},
            "components": {k: asdict(v) for k, v in self.entries.items()},
        }
