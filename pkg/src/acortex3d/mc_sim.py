"""Monte-Carlo simulation of the non-ideal VMM and the design-space error pipeline."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from . import device
from .errors import ConfigurationError, ContractError, DomainError
from .vmm_core import (
    EXACT,
    SignedWeightPlane,
    VmmDesignPoint,
    encode_input,
    precision_bits,
    time_domain_vmm,
)

#: Overflow fraction above which a run is flagged as under-provisioned.
OVERFLOW_WARN_RATE = 1e-3

#: Quantile of the per-trial error used for the reported precision (3-sigma).
PRECISION_QUANTILE = 0.9973


@dataclass(frozen=True)
class SimFlags:
    enable_noise: bool = False
    enable_coupling: bool = False
    enable_dibl: bool = False
    enable_variation: bool = False
    trials: int = 1
    seed: int = 0
    sigma_i: float = 0.03

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if self.sigma_i < 0:
            raise DomainError("sigma_i must be nonnegative")

    @property
    def any_enabled(self) -> bool:
        return self.enable_noise or self.enable_coupling or self.enable_dibl or self.enable_variation


@dataclass
class SimSummary:
    errors: np.ndarray  # per-trial E_c (fraction of T_int)
    max_error: float
    mean_error: float
    quantile_error: float
    p0: int | str
    p0_worst: int | str
    overflow_rate: float
    overflow_warning: bool

    def histogram(self, bins: int = 20) -> dict:
        top = self.max_error if self.max_error > 0 else 1.0
        counts, edges = np.histogram(self.errors, bins=bins, range=(0.0, top))
        return {"edges": edges.tolist(), "counts": counts.tolist()}

    def as_dict(self) -> dict:
        return {
            "trials": int(self.errors.size),
            "max_error": self.max_error,
            "mean_error": self.mean_error,
            "quantile_error": self.quantile_error,
            "quantile": PRECISION_QUANTILE,
            "p0": self.p0,
            "p0_worst": self.p0_worst,
            "overflow_rate": self.overflow_rate,
            "overflow_warning": self.overflow_warning,
            "histogram": self.histogram(),
        }


@dataclass
class SimResult:
    durations: np.ndarray  # (trials, N) signed differential output durations, seconds
    ideal: np.ndarray  # (N,) signed ideal durations
    summary: SimSummary

    def trial(self, k: int) -> np.ndarray:
        return self.durations[k]


@dataclass
class _Devices:
    string: device.StringModel = field(default_factory=device.StringModel)
    coupling: device.CouplingModel = field(default_factory=device.CouplingModel)


def _dibl_factors(sm, layer, dp, w, u):
    """Mean phase-I current factor ``1 - E_DIBL(w) * u / 2`` for every cell.

    ``u`` is the column's bit-line drop at the end of phase I as a fraction of
    the full swing; with the current error linear in the drop, the average
    over a linear discharge is half the end value.
    """
    table = device.dibl_table(sm, layer, dp.v_th, dp.dv_d)
    e = device.state_interp(table, w)
    return 1.0 - 0.5 * e * u[None, :]


def _single_ended(w, x_pulses, dp, layer, flags, rng, devs):
    """Per-trial column durations (trials, N) for one nonnegative weight plane."""
    m, n = w.shape
    t = flags.trials
    i_cells = w * dp.i_max
    if flags.enable_dibl:
        u = np.clip(i_cells.T @ x_pulses / (m * dp.i_max * dp.t_out), 0.0, 1.0)
        i_cells = i_cells * _dibl_factors(devs.string, layer, dp, w, u)

    cm = devs.coupling
    active = (x_pulses > 0)[:, None]
    q1 = cm.phase_charge(layer, cm.weight_state_factor(w), "I") * active
    # phase II sweeps every row through the top layer, programmed to the last state
    q2 = np.broadcast_to(cm.phase_charge(layer, cm.state_factor(-1), "II"), (m, n))
    random_coupling = flags.enable_coupling and cm.sigma_q > 0

    if not (flags.enable_variation or random_coupling):
        q = i_cells.T @ x_pulses
        if flags.enable_coupling:
            q = q + q1.sum(axis=0) + q2.sum(axis=0)
        return np.broadcast_to(q / (m * dp.i_max), (t, n)).copy()

    charge = np.empty((t, n))
    for k in range(t):
        cells = i_cells
        if flags.enable_variation:
            cells = cells * device.sample_variation(rng, flags.sigma_i, (m, n))
        q = cells.T @ x_pulses
        if flags.enable_coupling:
            eps1 = device.truncated_normal(rng, cm.sigma_q, (m, n))
            eps2 = device.truncated_normal(rng, cm.sigma_q, (m, n))
            q = q + (q1 * (1 + eps1)).sum(axis=0) + (q2 * (1 + eps2)).sum(axis=0)
        charge[k] = q
    return charge / (m * dp.i_max)


def simulate_vmm(
    weights: SignedWeightPlane,
    x: Sequence[float],
    dp: VmmDesignPoint,
    layer: int,
    flags: SimFlags,
    string_model: device.StringModel | None = None,
    coupling: device.CouplingModel | None = None,
) -> SimResult:
    """Run ``flags.trials`` noisy differential VMMs of ``weights`` on input ``x``.

    Each single-ended column integrates cell currents (with optional
    lognormal variation and DIBL), the bit-select coupling charges of phase I
    and phase II, and is clipped to ``[0, T_out]``.  Shot noise is one
    Gaussian per signed output with the differential doubling applied.
    With every flag off the result is identical to the ideal path.
    """
    devs = _Devices(string_model or device.StringModel(), coupling or device.CouplingModel())
    n_layers = min(devs.string.layers, devs.coupling.layers)
    if not 0 <= layer < n_layers:
        raise ContractError(f"layer {layer} outside [0, {n_layers - 1}]")
    pulses = encode_input(x, dp.t_int)
    if len(pulses) != weights.m:
        raise DomainError(f"input length {len(pulses)} does not match M = {weights.m}")
    rng = np.random.default_rng(flags.seed)
    m, n = weights.m, weights.n

    ideal = (
        time_domain_vmm(weights.w_plus, x, dp).durations
        - time_domain_vmm(weights.w_minus, x, dp).durations
    )
    if not flags.any_enabled:
        out = np.broadcast_to(ideal, (flags.trials, n)).copy()
        overflow = 0.0
    else:
        plus = _single_ended(weights.w_plus.w, pulses.durations, dp, layer, flags, rng, devs)
        minus = _single_ended(weights.w_minus.w, pulses.durations, dp, layer, flags, rng, devs)
        over = (plus > dp.t_out) | (minus > dp.t_out)
        overflow = float(over.any(axis=1).mean())
        out = np.clip(plus, 0.0, dp.t_out) - np.clip(minus, 0.0, dp.t_out)
        if flags.enable_noise:
            sigma = device.noise_sigma_duration(m, dp.i_max, dp.t_int).sigma
            out = out + 2.0 * sigma * dp.t_int * rng.standard_normal((flags.trials, n))

    errors = np.max(np.abs(out - ideal[None, :]), axis=1) / dp.t_int
    q_err = float(np.quantile(errors, PRECISION_QUANTILE))
    summary = SimSummary(
        errors=errors,
        max_error=float(errors.max()),
        mean_error=float(errors.mean()),
        quantile_error=q_err,
        p0=precision_bits(q_err),
        p0_worst=precision_bits(float(errors.max())),
        overflow_rate=overflow,
        overflow_warning=overflow > OVERFLOW_WARN_RATE,
    )
    return SimResult(durations=out, ideal=ideal, summary=summary)


def noise_free_error(weights, x, dp, layer, flags, **models) -> float:
    """Behavioral noise-free error (all non-noise flags as given, noise off)."""
    quiet = SimFlags(
        enable_noise=False,
        enable_coupling=flags.enable_coupling,
        enable_dibl=flags.enable_dibl,
        enable_variation=flags.enable_variation,
        trials=flags.trials,
        seed=flags.seed,
        sigma_i=flags.sigma_i,
    )
    return simulate_vmm(weights, x, dp, layer, quiet, **models).summary.max_error


# ----------------------------------------------------------------------------
# Analytical error pipeline


def _col_key(t_int: float, i_max: float) -> tuple[float, float]:
    return (round(t_int * 1e9, 6), round(i_max * 1e9, 6))


@dataclass(frozen=True)
class NoiseFreeErrorTable:
    """Noise-free VMM error (percent) per ``(T_int, I_max)`` column."""

    entries: dict

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> "NoiseFreeErrorTable":
        entries = {}
        for r in rows:
            if r["e_nf_pct"] <= 0:
                raise ConfigurationError(f"noise-free error must be positive: {r}")
            entries[_col_key(r["t_int"], r["i_max"])] = float(r["e_nf_pct"])
        return cls(entries)

    @classmethod
    def load(cls, path=None) -> "NoiseFreeErrorTable":
        if path is None:
            text = resources.files("acortex3d").joinpath("data/noise_free_error.json").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        return cls.from_rows(json.loads(text)["columns"])

    def columns(self) -> list[tuple[float, float]]:
        return [(float(f"{t}e-9"), float(f"{i}e-9")) for t, i in self.entries]

    def lookup(self, t_int: float, i_max: float) -> float:
        try:
            return self.entries[_col_key(t_int, i_max)]
        except KeyError:
            raise ConfigurationError(
                f"no noise-free error entry for T_int={t_int:g} s, I_max={i_max:g} A"
            ) from None


@dataclass(frozen=True)
class DesignSpaceRow:
    t_int: float
    i_max: float
    c0: float
    dv_cp_max: float
    alpha_cp: float
    t_out: float
    snr_cell_db: float
    e_3sigma_cell_pct: float
    e_nf_pct: float
    e_final_pct: dict  # M -> percent
    p0: dict  # M -> bits

    def as_dict(self) -> dict:
        return {
            "t_int": self.t_int,
            "i_max": self.i_max,
            "c0": self.c0,
            "dv_cp_max": self.dv_cp_max,
            "alpha_cp": self.alpha_cp,
            "t_out": self.t_out,
            "snr_cell_db": self.snr_cell_db,
            "e_3sigma_cell_pct": self.e_3sigma_cell_pct,
            "e_nf_pct": self.e_nf_pct,
            "e_final_pct": {str(k): v for k, v in self.e_final_pct.items()},
            "p0": {str(k): v for k, v in self.p0.items()},
        }


def final_error(e_nf_pct: float, m: int, i_max: float, t_int: float) -> float:
    """Noise-free error plus the single-device 3-sigma noise error scaled by ``1/sqrt(M)``."""
    if e_nf_pct < 0:
        raise DomainError("noise-free error must be nonnegative")
    if m < 1:
        raise DomainError(f"M must be at least 1, got {m}")
    e_cell = device.noise_sigma_duration(1, i_max, t_int).e_3sigma * 100.0
    return e_nf_pct + e_cell / math.sqrt(m)


def explore_design_space(
    columns: Sequence[tuple[float, float]],
    e_nf: NoiseFreeErrorTable,
    m_list: Sequence[int] = (10, 100, 1000),
    dp_template: VmmDesignPoint | None = None,
) -> list[DesignSpaceRow]:
    """One row per ``(T_int, I_max)`` column, with final error and bits per VMM size."""
    if not columns:
        raise ConfigurationError("at least one (T_int, I_max) column is required")
    rows = []
    for t_int, i_max in columns:
        if dp_template is None:
            dp = VmmDesignPoint(t_int, i_max)
        else:
            dp = VmmDesignPoint(t_int, i_max, dp_template.dv_cmp, dp_template.q_d_max, dp_template.v_th)
        nf = e_nf.lookup(t_int, i_max)
        noise = device.noise_sigma_duration(1, i_max, t_int)
        finals = {m: final_error(nf, m, i_max, t_int) for m in m_list}
        rows.append(
            DesignSpaceRow(
                t_int=t_int,
                i_max=i_max,
                c0=dp.c0,
                dv_cp_max=dp.dv_cp_max,
                alpha_cp=dp.alpha_cp,
                t_out=dp.t_out,
                snr_cell_db=noise.snr_cell_db,
                e_3sigma_cell_pct=noise.e_3sigma * 100.0,
                e_nf_pct=nf,
                e_final_pct=finals,
                p0={m: precision_bits(e / 100.0) for m, e in finals.items()},
            )
        )
    return rows


def optimal_design_point(rows: Sequence[DesignSpaceRow], min_bits: int = 4) -> tuple[float, float] | None:
    """Cheapest column (smallest ``I_max * T_int``) reaching ``min_bits`` at every M."""
    ok = [r for r in rows if all(b == EXACT or b >= min_bits for b in r.p0.values())]
    if not ok:
        return None
    best = min(ok, key=lambda r: (r.i_max * r.t_int, r.i_max))
    return best.t_int, best.i_max


def precision_vs_size(
    t_int: float, i_max: float, e_nf_pct: float, m_range: Sequence[int]
) -> list[tuple[int, int | str]]:
    m_range = list(m_range)
    if not m_range:
        raise DomainError("M range must be non-empty")
    if any(b <= a for a, b in zip(m_range, m_range[1:])):
        raise DomainError("M range must be strictly increasing")
    return [(m, precision_bits(final_error(e_nf_pct, m, i_max, t_int) / 100.0)) for m in m_range]
