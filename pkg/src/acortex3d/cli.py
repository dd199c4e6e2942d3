"""Command-line driver.

Every command resolves its configuration as defaults < ``--config`` file <
flags, and every output file embeds the tool version, the resolved config
and the seed.  Feeding an output file back through ``--config`` reruns the
same computation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import re
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .arch import ArchConfig, CostCatalog, build_processor
from .benchmarks import load_benchmark
from .errors import (
    AcortexError,
    CapacityError,
    ConfigurationError,
    ContractError,
    DomainError,
    GraphFormatError,
    NumericalError,
    OutputRangeError,
)
from .mapper import kernels_for_graph, pack, quantize_weights, tile_lower_bound
from .mc_sim import (
    NoiseFreeErrorTable,
    SimFlags,
    explore_design_space,
    optimal_design_point,
    simulate_vmm,
)
from .netgraph import memory_profile, processing_order
from .perf import build_schedule, compare_reference, estimate, reference_row
from .vmm_core import SignedWeightPlane, VmmDesignPoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CAPACITY, EXIT_NUMERICAL = 0, 1, 2, 3, 4

TOOL = "acortex3d"


class UsageError(ValueError):
    """Bad command-line or config input (exit code 1)."""


# ----------------------------------------------------------------------------
# Units

_PREFIX = {"f": -15, "p": -12, "n": -9, "u": -6, "µ": -6, "m": -3, "": 0, "k": 3, "M": 6, "G": 9}
_UNITS = ("s", "A", "F", "V", "C", "Hz", "B")
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([fpnuµmkMG]?)(s|A|F|V|C|Hz|B)?\s*$")


def parse_quantity(text) -> float:
    """``"16ns"`` -> ``1.6e-8``; plain numbers pass through as SI."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    m = _QTY.match(str(text))
    if not m or (m.group(2) and not m.group(3) and m.group(2) != "k"):
        raise UsageError(f"cannot parse quantity {text!r}")
    # shift the decimal exponent so "300nA" parses to exactly 3e-7
    mant, _, exp = m.group(1).lower().partition("e")
    return float(f"{mant}e{int(exp or 0) + _PREFIX[m.group(2)]}")


def parse_int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad integer list {text!r}") from None


def parse_columns(text: str) -> list:
    """``"16ns:300nA,8ns:100nA"`` -> ``[[1.6e-8, 3e-7], [8e-9, 1e-7]]``."""
    cols = []
    for item in text.split(","):
        if not item.strip():
            continue
        parts = item.split(":")
        if len(parts) != 2:
            raise UsageError(f"column {item!r} must look like T_int:I_max (e.g. 16ns:300nA)")
        cols.append([parse_quantity(parts[0]), parse_quantity(parts[1])])
    return cols


# ----------------------------------------------------------------------------
# Configuration


def _default_columns() -> list:
    return [list(c) for c in NoiseFreeErrorTable.load().columns()]


DEFAULTS = {
    "explore": {"columns": None, "m_list": [10, 100, 1000], "enf_table": None, "dv_cmp": 0.2, "q_d_max": 6e-16, "v_th": 0.6},
    "simulate": {
        "m": 10, "n": 16, "t_int": 16e-9, "i_max": 300e-9, "layer": 63, "trials": 1000,
        "noise": False, "coupling": False, "dibl": False, "variation": False, "sigma_i": 0.03,
    },
    "map": {"graph": "toy-chain", "iterations": 32, "mode": "row-first", "prefer_colayer": True, "arch": {}},
    "analyze-graph": {"graph": "toy-chain"},
    "estimate": {"graph": "gnmt-1024", "iterations": 32, "mode": "row-first", "arch": {}, "catalog": None, "reference": None, "references": None},
    "compare": {"report": None, "reference": "table2-baseline", "references": None},
}


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
        if text.startswith("# tool="):
            # CSV output: the resolved config sits in the second comment line
            line = next((l for l in text.splitlines() if l.startswith("# config=")), "")
            text = line[len("# config="):]
        data = json.loads(text)
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"config file {path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data.get("config", data)


def resolve_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[args.command]))
    cfg["seed"] = 0
    cfg["format"] = "json"
    if args.config:
        loaded = _load_config_file(args.config)
        if loaded.get("command", args.command) != args.command:
            raise UsageError(f"config was produced by {loaded['command']!r}, not {args.command!r}")
        unknown = set(loaded) - set(cfg) - {"command", "version"}
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        for k, v in loaded.items():
            if k == "arch" and isinstance(v, dict):
                cfg["arch"] = {**cfg.get("arch", {}), **v}
            elif k not in ("command", "version"):
                cfg[k] = v
    for k, v in vars(args).items():
        if k in ("command", "config", "out", "func") or v is None:
            continue
        if k in ("share", "t_ls"):
            cfg.setdefault("arch", {})["cap_sharing" if k == "share" else "t_ls"] = v
        else:
            cfg[k] = v
    if cfg["format"] not in ("json", "csv"):
        raise UsageError("format must be json or csv")
    cfg["command"] = args.command
    return cfg


def _arch(cfg: dict) -> ArchConfig:
    d = dict(cfg.get("arch") or {})
    for key in ("t_ls", "clock"):
        if key in d:
            d[key] = parse_quantity(d[key])
    if isinstance(d.get("dp"), dict):
        d["dp"] = {k: parse_quantity(v) for k, v in d["dp"].items()}
    try:
        return ArchConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigurationError(f"bad arch config: {exc}") from None


# ----------------------------------------------------------------------------
# Output


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _envelope(cfg: dict, result) -> dict:
    return {"tool": TOOL, "version": __version__, "seed": cfg["seed"], "config": cfg, "result": result}


def _csv_text(cfg: dict, header: list, rows: list) -> str:
    buf = io.StringIO()
    buf.write(f"# tool={TOOL} version={__version__} seed={cfg['seed']}\n")
    buf.write("# config=" + json.dumps(cfg, sort_keys=True, default=_jsonable) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_outputs(out: Path, cfg: dict, stem: str, result: dict, table: tuple | None = None) -> list:
    """Write ``stem.json`` (always when format is json) or ``stem.csv`` plus extra tables."""
    paths = []
    if cfg["format"] == "json" or table is None:
        p = out / f"{stem}.json"
        atomic_write(p, json.dumps(_envelope(cfg, result), indent=1, sort_keys=True, default=_jsonable) + "\n")
        paths.append(p)
    if cfg["format"] == "csv" and table is not None:
        p = out / f"{stem}.csv"
        atomic_write(p, _csv_text(cfg, *table))
        paths.append(p)
    return paths


# ----------------------------------------------------------------------------
# Commands


def cmd_explore(cfg: dict, out: Path) -> int:
    columns = cfg["columns"] if cfg["columns"] is not None else _default_columns()
    if isinstance(columns, str):
        columns = parse_columns(columns)
    if not columns:
        raise UsageError("at least one (T_int, I_max) column is required")
    columns = [(parse_quantity(t), parse_quantity(i)) for t, i in columns]
    cfg["columns"] = [list(c) for c in columns]
    m_list = cfg["m_list"]
    if isinstance(m_list, str):
        m_list = parse_int_list(m_list)
    if not m_list or min(m_list) < 1:
        raise UsageError("m_list needs positive VMM sizes")
    cfg["m_list"] = list(m_list)
    table = NoiseFreeErrorTable.load(cfg["enf_table"])
    template = VmmDesignPoint(1e-9, 1e-9, parse_quantity(cfg["dv_cmp"]), parse_quantity(cfg["q_d_max"]), parse_quantity(cfg["v_th"]))
    rows = explore_design_space(columns, table, m_list, template)
    best = optimal_design_point(rows)
    result = {"rows": [r.as_dict() for r in rows], "optimal": None if best is None else {"t_int": best[0], "i_max": best[1]}}
    header = ["t_int", "i_max", "c0", "dv_cp_max", "alpha_cp", "t_out", "snr_cell_db", "e_3sigma_cell_pct", "e_nf_pct"]
    header += [f"e_final_pct_m{m}" for m in m_list] + [f"p0_m{m}" for m in m_list]
    body = [
        [r.t_int, r.i_max, r.c0, r.dv_cp_max, r.alpha_cp, r.t_out, r.snr_cell_db, r.e_3sigma_cell_pct, r.e_nf_pct]
        + [r.e_final_pct[m] for m in m_list] + [r.p0[m] for m in m_list]
        for r in rows
    ]
    write_outputs(out, cfg, "explore", result, (header, body))
    for r in rows:
        bits = " ".join(f"M={m}:{r.p0[m]}b" for m in m_list)
        print(f"T_int={r.t_int * 1e9:g}ns I_max={r.i_max * 1e9:g}nA C0={r.c0 * 1e15:.1f}fF T_out={r.t_out * 1e9:.2f}ns {bits}")
    if best is not None:
        print(f"optimal: T_int={best[0] * 1e9:g}ns I_max={best[1] * 1e9:g}nA")
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Path) -> int:
    for key in ("t_int", "i_max"):
        cfg[key] = parse_quantity(cfg[key])
    for key in ("m", "n", "layer", "trials"):
        if not isinstance(cfg[key], int) or cfg[key] < (0 if key == "layer" else 1):
            raise UsageError(f"{key} must be a {'nonnegative' if key == 'layer' else 'positive'} integer")
    if not 0 <= cfg["sigma_i"] < 1:
        raise UsageError("sigma_i must lie in [0, 1)")
    dp = VmmDesignPoint(cfg["t_int"], cfg["i_max"])
    rng = np.random.default_rng(cfg["seed"])
    w = np.sign(rng.uniform(-1, 1, (cfg["m"], cfg["n"]))) * quantize_weights(rng.uniform(-1, 1, (cfg["m"], cfg["n"])))
    x = np.round(rng.uniform(0, 1, cfg["m"]) * 15) / 15
    flags = SimFlags(cfg["noise"], cfg["coupling"], cfg["dibl"], cfg["variation"], cfg["trials"], cfg["seed"], cfg["sigma_i"])
    try:
        res = simulate_vmm(SignedWeightPlane(w), x, dp, cfg["layer"], flags)
    except DomainError as exc:
        if isinstance(exc, OutputRangeError):
            raise
        raise UsageError(str(exc)) from None
    s = res.summary
    result = s.as_dict()
    hist = s.histogram()
    body = [[lo, hi, c] for lo, hi, c in zip(hist["edges"], hist["edges"][1:], hist["counts"])]
    write_outputs(out, cfg, "simulate", result, (["e_c_low", "e_c_high", "count"], body))
    print(f"trials={cfg['trials']} E_c(q)={s.quantile_error * 100:.3f}% max={s.max_error * 100:.3f}% p0={s.p0} p0_worst={s.p0_worst} overflow={s.overflow_rate:.2e}")
    if s.overflow_warning:
        print("warning: overflow rate above threshold", file=sys.stderr)
    return EXIT_OK


def _graph(cfg: dict):
    if not cfg.get("graph"):
        raise UsageError("a graph name or path is required")
    try:
        return load_benchmark(cfg["graph"])
    except FileNotFoundError:
        raise UsageError(f"graph {cfg['graph']!r} not found") from None


def _placement(g, arch: ArchConfig, cfg: dict):
    kernels = kernels_for_graph(g, arch, cfg.get("mode", "row-first"))
    return kernels, pack(kernels, arch, iterations=int(cfg["iterations"]), seed=cfg["seed"],
                         prefer_colayer=cfg.get("prefer_colayer", True))


def cmd_map(cfg: dict, out: Path) -> int:
    arch = _arch(cfg)
    g = _graph(cfg)
    kernels, placement = _placement(g, arch, cfg)
    cfg["arch"] = arch.to_dict()
    d = placement.to_dict()
    d["lower_bound"] = tile_lower_bound(kernels, arch)
    d["layers_available"] = arch.effective_layers
    grid = placement.occupancy()
    used = sorted({p.layer for p in placement.pieces})
    for layer in used:
        atomic_write(out / "placement" / f"layer_{layer:03d}.csv",
                     "\n".join(",".join(str(v) for v in row) for row in grid[layer].tolist()) + "\n")
    rows = [[k, p["piece"], p["layer"], p["row"], p["col"], p["rows"], p["cols"]] for k, v in d["kernels"].items() for p in v]
    write_outputs(out, cfg, "map", d, (["kernel", "piece", "layer", "row", "col", "rows", "cols"], rows))
    print(f"{g.name}: {len(kernels)} kernels, {placement.tiles_used} tiles, {placement.layers_used} of {arch.effective_layers} layers (lower bound {d['lower_bound']})")
    return EXIT_OK


def cmd_analyze_graph(cfg: dict, out: Path) -> int:
    g = _graph(cfg)
    order = processing_order(g)
    prof = memory_profile(g, order)
    result = {
        "name": g.name, "nodes": len(g.nodes), "edges": len(g.edges), "weights": g.total_weights,
        "macs": g.total_macs, "peak_bytes": prof.peak_bytes,
        "peak_node": order[prof.peak_step] if order else None,
        "profile": [{"node": n, "live_bytes": b} for n, b in zip(order, prof.live_bytes)],
    }
    write_outputs(out, cfg, "analyze-graph", result, (["step", "node", "live_bytes"], [[i, n, b] for i, (n, b) in enumerate(zip(order, prof.live_bytes))]))
    print(f"{g.name}: {len(g.nodes)} nodes, {g.total_weights} weights, peak memory {prof.peak_bytes} bytes")
    return EXIT_OK


def _print_deviations(devs) -> bool:
    ok = True
    for d in devs:
        ok &= d.ok
        print(f"{'PASS' if d.ok else 'FAIL'} {d.metric}: {d.value:.4g} vs {d.reference:.4g} ({d.relative * 100:+.1f}%, tol {d.tolerance * 100:.0f}%)")
    return ok


def cmd_estimate(cfg: dict, out: Path) -> int:
    arch = _arch(cfg)
    catalog = CostCatalog.load(cfg["catalog"])
    g = _graph(cfg)
    build_processor(arch)
    _, placement = _placement(g, arch, cfg)
    sched = build_schedule(g, placement, arch, catalog)
    report = estimate(sched, arch, catalog)
    cfg["arch"] = arch.to_dict()
    result = report.to_dict()
    result["layers_used"] = placement.layers_used
    if cfg["reference"]:
        devs = compare_reference(report, reference_row(cfg["reference"], cfg["references"]))
        result["reference"] = {"name": cfg["reference"], "deviations": [d.__dict__ | {"ok": d.ok} for d in devs]}
    m = report.metrics()
    write_outputs(out, cfg, "estimate", result, (["metric", "value"], [[k, v] for k, v in m.items()]))
    if cfg["format"] == "csv":
        atomic_write(out / "estimate_breakdown.csv", _csv_text(cfg, *_csv_rows(report.breakdown_csv())))
    print(f"{g.name}: area {m['area_mm2']:.2f} mm2, power {m['power_w']:.4f} W, {m['throughput_tops']:.2f} TOps/s, "
          f"SE {m['se_mb_per_mm2']:.2f} MB/mm2, EE {m['ee_tops_per_j']:.2f} TOps/J")
    if cfg["reference"]:
        _print_deviations(devs)
    return EXIT_OK


def _csv_rows(text: str) -> tuple:
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def cmd_compare(cfg: dict, out: Path) -> int:
    if not cfg["report"]:
        raise UsageError("compare needs --report PATH (an estimate output)")
    try:
        data = json.loads(Path(cfg["report"]).read_text())
        metrics = data["result"]["metrics"]
    except FileNotFoundError:
        raise UsageError(f"report {cfg['report']} not found") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise GraphFormatError(f"{cfg['report']} is not an estimate report ({exc})") from None
    devs = compare_reference(metrics, reference_row(cfg["reference"], cfg["references"]))
    rows = [[d.metric, d.value, d.reference, d.relative, d.tolerance, d.ok] for d in devs]
    result = {"reference": cfg["reference"], "deviations": [d.__dict__ | {"ok": d.ok} for d in devs]}
    write_outputs(out, cfg, "compare", result, (["metric", "value", "reference", "relative", "tolerance", "ok"], rows))
    _print_deviations(devs)
    return EXIT_OK


COMMANDS = {
    "explore": cmd_explore,
    "simulate": cmd_simulate,
    "map": cmd_map,
    "analyze-graph": cmd_analyze_graph,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _flag(value: str) -> bool:
    return value.lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config (or a previous output file)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=("json", "csv"))

    p = _Parser(prog=TOOL, description="3D-NAND time-domain VMM simulator and accelerator estimator")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("explore", parents=[common], help="design-space table")
    s.add_argument("--columns", type=parse_columns, help="T_int:I_max pairs, e.g. 16ns:300nA,8ns:100nA")
    s.add_argument("--m-list", dest="m_list", type=parse_int_list)
    s.add_argument("--enf-table", dest="enf_table")

    s = sub.add_parser("simulate", parents=[common], help="Monte-Carlo VMM simulation")
    s.add_argument("--m", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--t-int", dest="t_int", type=parse_quantity)
    s.add_argument("--i-max", dest="i_max", type=parse_quantity)
    s.add_argument("--layer", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--sigma-i", dest="sigma_i", type=float)
    for flag in ("noise", "coupling", "dibl", "variation"):
        s.add_argument(f"--{flag}", type=_flag, nargs="?", const=True, metavar="BOOL")
    s.add_argument("--all", dest="all_flags", action="store_true", help="enable every non-ideality")

    for name, helptext in (("map", "place kernels into NAND layers"), ("estimate", "performance report"), ("analyze-graph", "memory profile")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--graph", help="shipped graph name or graph file")
        if name != "analyze-graph":
            s.add_argument("--iterations", type=int)
            s.add_argument("--share", type=int, help="NAND blocks per CAP circuit")
            s.add_argument("--t-ls", dest="t_ls", type=parse_quantity)
            s.add_argument("--mode", choices=("row-first", "column-first"))
        if name == "estimate":
            s.add_argument("--catalog")
            s.add_argument("--reference")
            s.add_argument("--references", help="reference table file")

    s = sub.add_parser("compare", parents=[common], help="compare an estimate report with a reference row")
    s.add_argument("--report")
    s.add_argument("--reference")
    s.add_argument("--references")
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, CapacityError):
        return EXIT_CAPACITY
    if isinstance(exc, (NumericalError, OutputRangeError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (GraphFormatError, json.JSONDecodeError)):
        return EXIT_DATA
    if isinstance(exc, (UsageError, ConfigurationError, ContractError, DomainError)):
        return EXIT_USAGE
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "all_flags", False):
        args.noise = args.coupling = args.dibl = args.variation = True
    if hasattr(args, "all_flags"):
        del args.all_flags
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, Path(args.out))
    except CapacityError as exc:
        print(f"error: {exc} (short by {exc.shortfall_layers} layers)", file=sys.stderr)
        return EXIT_CAPACITY
    except (AcortexError, UsageError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
