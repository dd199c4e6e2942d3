"""Behavioral models of DIBL, capacitive coupling, shot noise and process variation.

The string model solves the series network of a NAND string: the selected
cell sits between a drain-side resistance (bit-select transistor plus the
pass-state cells above it) and a source-side resistance (pass-state cells
below it plus the ground-select transistor).  Layer 0 is the top layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import DomainError, NumericalError

Q_E = 1.602176634e-19

_BISECT_TOL = 1e-15
_BISECT_MAX_STEPS = 200


class CellLaw(Protocol):
    """Drain current of one cell given its drain-source and source voltages."""

    n_states: int

    def current(self, state: int, v_ds: float, v_s: float) -> float: ...


@dataclass(frozen=True)
class SoftSaturationCell:
    """``I = I_on(s) * (1 - exp(-V_ds/V_sat)) * (1 + lambda V_ds) * exp(-V_s/V_deg)``.

    The exponential knee gives soft saturation, ``dibl_slope`` (``lambda``)
    the residual linear drain dependence, and ``v_deg`` the loss of gate
    overdrive when the source node rises (source degeneration).
    """

    i_on: tuple[float, ...] = (100e-9, 200e-9, 300e-9, 400e-9)
    v_sat: float = 0.15
    dibl_slope: float = 0.1
    v_deg: float = 0.1

    def __post_init__(self):
        if not self.i_on or min(self.i_on) <= 0:
            raise DomainError("every state needs a positive on-current")
        if self.v_sat <= 0 or self.v_deg <= 0 or self.dibl_slope < 0:
            raise DomainError("v_sat, v_deg must be positive and dibl_slope nonnegative")

    @property
    def n_states(self) -> int:
        return len(self.i_on)

    def current(self, state: int, v_ds: float, v_s: float) -> float:
        return (
            self.i_on[state]
            * -math.expm1(-v_ds / self.v_sat)
            * (1.0 + self.dibl_slope * v_ds)
            * math.exp(-v_s / self.v_deg)
        )


@dataclass(frozen=True)
class FunctionCell:
    """Wraps arbitrary ``f(state, v_ds, v_s)`` callables (used for tests and what-ifs)."""

    fn: Callable[[int, float, float], float]
    n_states: int = 1

    def current(self, state: int, v_ds: float, v_s: float) -> float:
        return self.fn(state, v_ds, v_s)


@dataclass(frozen=True)
class StringModel:
    layers: int = 64
    cell: CellLaw = field(default_factory=SoftSaturationCell)
    r_pass: float = 2e3
    r_bsl: float = 5e3
    r_gsl: float = 5e3

    def __post_init__(self):
        if self.layers < 1:
            raise DomainError("a string needs at least one layer")
        if min(self.r_pass, self.r_bsl, self.r_gsl) < 0:
            raise DomainError("resistances must be nonnegative")

    @property
    def n_states(self) -> int:
        return self.cell.n_states

    def series_resistances(self, layer: int) -> tuple[float, float]:
        """``(R_D, R_S)`` seen by the cell on ``layer``."""
        self._check_layer(layer)
        r_d = layer * self.r_pass + self.r_bsl
        r_s = (self.layers - 1 - layer) * self.r_pass + self.r_gsl
        return r_d, r_s

    def cell_params(self, state: int, v_ds: float = 0.6, v_s: float = 0.0, h: float = 1e-5) -> dict:
        """Small-signal ``g_m`` (source-referred) and output resistance ``R_0``."""
        law = self.cell.current
        gds = (law(state, v_ds + h, v_s) - law(state, v_ds - h, v_s)) / (2 * h)
        # raising the source lowers V_gs and V_ds together; g_m is the V_gs part
        dvs = (law(state, v_ds, v_s + h) - law(state, v_ds, v_s - h)) / (2 * h)
        return {"g_m": max(-dvs, 0.0), "R_0": (1.0 / gds) if gds > 0 else math.inf}

    def _check_layer(self, layer: int):
        if not 0 <= layer < self.layers:
            raise DomainError(f"layer {layer} outside [0, {self.layers - 1}]")


def string_current(sm: StringModel, layer: int, state: int, v_d: float) -> float:
    """Current through the string when the bit line sits at ``v_d``.

    Solves ``I = f(V_D - I (R_D + R_S), I R_S)`` by bisection; the right-hand
    side is non-increasing in ``I`` so the root is unique.
    """
    if v_d <= 0:
        raise DomainError(f"drain voltage must be positive, got {v_d}")
    if not 0 <= state < sm.n_states:
        raise DomainError(f"state {state} outside [0, {sm.n_states - 1}]")
    r_d, r_s = sm.series_resistances(layer)
    law = sm.cell.current

    def residual(i):
        return law(state, v_d - i * (r_d + r_s), i * r_s) - i

    lo = 0.0
    hi = law(state, v_d, 0.0)
    if hi <= 0:
        return 0.0
    if r_d == 0 and r_s == 0:
        return hi
    for _ in range(_BISECT_MAX_STEPS):
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _BISECT_TOL:
            return 0.5 * (lo + hi)
    raise NumericalError(f"string current did not converge (layer {layer}, state {state}, V_D {v_d})")


def dibl_error(sm: StringModel, layer: int, state: int, v_th: float, dv_d: float) -> float:
    """Relative current change between the two extreme bit-line voltages."""
    if dv_d <= 0:
        raise DomainError(f"swing must be positive, got {dv_d}")
    high = string_current(sm, layer, state, v_th + dv_d)
    if high == 0:
        raise DomainError("string carries no current at the top of the swing")
    return 1.0 - string_current(sm, layer, state, v_th) / high


def small_signal_gain(g_m: float, r_0: float, r_d: float, r_s: float) -> float:
    """String transconductance ``dI_D/dV_D``."""
    denom = r_d + r_0 + (1.0 + g_m * r_0) * r_s
    if denom <= 0:
        raise DomainError("small-signal denominator must be positive")
    return 1.0 / denom


@dataclass(frozen=True)
class CouplingModel:
    """Disturbance charge injected on the bit line by the bit-select edges.

    Gate-drain charge ``q_gd`` is layer independent and cancels between the
    rising and falling edges of phase I, so phase I only sees the drain-side
    charge of the selected layer.  Phase II applies a single rising edge with
    the top (sweep) layer selected.  The drain-side charge grows linearly
    from ``q_dd_top`` at layer 0 to the value that makes the worst state at
    the bottom layer total exactly ``q_d_max``.
    """

    layers: int = 64
    q_d_max: float = 6e-16
    q_gd: float = 1.0e-16
    q_dd_top: float = 0.5e-16
    state_scale: tuple[float, ...] = (0.9, 0.933, 0.967, 1.0)
    sigma_q: float = 0.05

    def __post_init__(self):
        if self.q_gd < 0 or self.q_dd_top < 0 or self.sigma_q < 0:
            raise DomainError("coupling charges and sigma_q must be nonnegative")
        if not self.state_scale or min(self.state_scale) <= 0 or max(self.state_scale) > 1:
            raise DomainError("state scale factors must lie in (0, 1]")
        if self.q_dd_bottom < self.q_dd_top:
            raise DomainError("q_d_max too small for the given q_gd and q_dd_top")

    @property
    def q_dd_bottom(self) -> float:
        return self.q_d_max - self.q_gd - self.q_dd_top

    def q_dd(self, layer, state_factor):
        """Drain-side charge; ``layer`` and ``state_factor`` broadcast."""
        frac = np.asarray(layer, dtype=float) / max(self.layers - 1, 1)
        return np.asarray(state_factor) * ((1.0 - frac) * self.q_dd_top + frac * self.q_dd_bottom)

    def state_factor(self, state) -> np.ndarray:
        return np.asarray(self.state_scale)[state]

    def weight_state_factor(self, w) -> np.ndarray:
        """State factor for a normalized conductance, interpolated across states."""
        scale = np.asarray(self.state_scale)
        pos = np.asarray(w, dtype=float) * (len(scale) - 1)
        return np.interp(pos, np.arange(len(scale)), scale)

    def phase_charge(self, layer, state_factor, phase: str):
        if phase == "I":
            return self.q_dd(layer, state_factor)
        if phase == "II":
            return self.q_gd + self.q_dd(0, state_factor)
        raise DomainError(f"phase must be 'I' or 'II', got {phase!r}")

    def total_charge(self, layer, state_factor):
        return self.phase_charge(layer, state_factor, "I") + self.phase_charge(layer, state_factor, "II")


def truncated_normal(rng: np.random.Generator, sigma: float, size=None):
    z = rng.standard_normal(size)
    return sigma * np.clip(z, -3.0, 3.0)


def coupling_disturbance(
    cm: CouplingModel,
    layer: int,
    state: int,
    phase: str | None,
    c0: float,
    rng: np.random.Generator | None = None,
) -> float:
    """Bit-line voltage disturbance ``Q_D (1 + eps) / C_0`` for one input.

    ``phase`` is ``"I"``, ``"II"`` or ``None`` for the sum of both phases.
    Without ``rng`` the charge is nominal (``eps = 0``).
    """
    if c0 <= 0:
        raise DomainError(f"C_0 must be positive, got {c0}")
    if not 0 <= layer < cm.layers:
        raise DomainError(f"layer {layer} outside [0, {cm.layers - 1}]")
    sf = cm.state_factor(state)
    q = cm.total_charge(layer, sf) if phase is None else cm.phase_charge(layer, sf, phase)
    eps = 0.0 if rng is None or cm.sigma_q == 0 else float(truncated_normal(rng, cm.sigma_q))
    return float(q) * (1.0 + eps) / c0


@dataclass(frozen=True)
class NoiseFigures:
    sigma: float
    e_3sigma: float
    snr_cell: float
    snr_mx1: float

    @property
    def snr_cell_db(self) -> float:
        return 10.0 * math.log10(self.snr_cell)

    @property
    def snr_mx1_db(self) -> float:
        return 10.0 * math.log10(self.snr_mx1)


def noise_sigma_duration(m: int, i_max: float, t: float) -> NoiseFigures:
    """Shot-noise figures of an ``m``-input dot product.

    ``sigma`` is a fraction of ``t``; the 3-sigma error ``e_3sigma = 6 sigma``
    carries the factor two of the differential scheme.
    """
    if m < 1:
        raise DomainError(f"M must be at least 1, got {m}")
    if i_max <= 0 or t <= 0:
        raise DomainError("I_max and T must be positive")
    sigma = math.sqrt(2 * Q_E / (m * i_max * t))
    snr_cell = i_max * t / (2 * Q_E)
    return NoiseFigures(sigma=sigma, e_3sigma=6 * sigma, snr_cell=snr_cell, snr_mx1=m * snr_cell)


def sample_variation(rng: np.random.Generator, sigma_i: float, count) -> np.ndarray:
    """Lognormal current multipliers with mean 1 and relative std ``sigma_i``."""
    if sigma_i < 0:
        raise DomainError(f"sigma_I must be nonnegative, got {sigma_i}")
    if sigma_i == 0:
        return np.ones(count)
    s2 = math.log1p(sigma_i**2)
    return np.exp(math.sqrt(s2) * rng.standard_normal(count) - 0.5 * s2)


def dibl_table(sm: StringModel, layer: int, v_th: float, dv_d: float) -> np.ndarray:
    """DIBL error of every state on one layer."""
    return np.array([dibl_error(sm, layer, s, v_th, dv_d) for s in range(sm.n_states)])


def state_interp(values: Sequence[float], w) -> np.ndarray:
    """Interpolate per-state quantities onto normalized conductances ``w``."""
    values = np.asarray(values, dtype=float)
    pos = np.asarray(w, dtype=float) * (len(values) - 1)
    return np.interp(pos, np.arange(len(values)), values)
