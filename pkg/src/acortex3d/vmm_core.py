"""Ideal time-domain vector-by-matrix multiplication.

Inputs and outputs are pulse durations inside a window ``T``; weights are
normalized cell currents ``w = I / I_max``.  Charge integrated on a column in
phase I is swept out by a constant ``M * I_max`` current in phase II, so the
output pulse length is ``(1 / (M I_max)) * sum_i I_ij * dt_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, OutputRangeError

#: Marker returned as the bit precision when the compute error is exactly zero.
EXACT = "exact"

_OVERSHOOT_RTOL = 1e-9


@dataclass(frozen=True)
class VmmDesignPoint:
    """Circuit parameters of one 3D-VMM block plus quantities derived from them.

    All values are SI (seconds, amperes, volts, coulombs).
    """

    t_int: float
    i_max: float
    dv_cmp: float = 0.2
    q_d_max: float = 6e-16
    v_th: float = 0.6

    def __post_init__(self):
        for name in ("t_int", "i_max", "dv_cmp", "q_d_max", "v_th"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def c0(self) -> float:
        """Load capacitance per input, farads."""
        return self.i_max * self.t_int / self.dv_cmp

    @property
    def dv_cp_max(self) -> float:
        """Worst-case coupling swing on the bit line, volts."""
        return self.q_d_max / self.c0

    @property
    def alpha_cp(self) -> float:
        return 1.0 + self.dv_cp_max / self.dv_cmp

    @property
    def t_out(self) -> float:
        """Output window stretched to absorb the worst coupling disturbance."""
        return self.alpha_cp * self.t_int

    @property
    def dv_d(self) -> float:
        """Total bit-line swing reserved for compute plus coupling."""
        return self.dv_cmp + self.dv_cp_max

    def load_capacitance(self, m: int) -> float:
        """Column load capacitor for ``m`` inputs, ``M * I_max * T / V_th``."""
        return m * self.i_max * self.t_int / self.v_th

    def as_dict(self) -> dict:
        return {
            "t_int": self.t_int,
            "i_max": self.i_max,
            "dv_cmp": self.dv_cmp,
            "q_d_max": self.q_d_max,
            "v_th": self.v_th,
        }


@dataclass(frozen=True)
class WeightPlane:
    """Nonnegative normalized weights, shape ``(M, N)``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.size == 0:
            raise DomainError(f"weights must be a non-empty 2-D array, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or w.min() < 0.0 or w.max() > 1.0:
            bad = np.argwhere(~((w >= 0.0) & (w <= 1.0)))[0]
            raise DomainError(f"weight {tuple(int(i) for i in bad)} outside [0, 1]")
        object.__setattr__(self, "w", w)

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @property
    def n(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class SignedWeightPlane:
    """Weights in ``[-1, 1]`` realized on differential column pairs."""

    w_signed: np.ndarray
    w_plus: WeightPlane = field(init=False, repr=False)
    w_minus: WeightPlane = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.w_signed, dtype=float)
        if w.ndim != 2 or w.size == 0:
            raise DomainError(f"weights must be a non-empty 2-D array, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.abs(w).max() > 1.0:
            bad = np.argwhere(~(np.abs(w) <= 1.0))[0]
            raise DomainError(f"signed weight {tuple(int(i) for i in bad)} outside [-1, 1]")
        object.__setattr__(self, "w_signed", w)
        # canonical split: at most one cell of each pair carries current
        object.__setattr__(self, "w_plus", WeightPlane(np.maximum(w, 0.0)))
        object.__setattr__(self, "w_minus", WeightPlane(np.maximum(-w, 0.0)))

    @property
    def m(self) -> int:
        return self.w_signed.shape[0]

    @property
    def n(self) -> int:
        return self.w_signed.shape[1]


@dataclass(frozen=True)
class PulseVector:
    durations: np.ndarray
    window: float

    def __post_init__(self):
        d = np.asarray(self.durations, dtype=float)
        if self.window <= 0:
            raise DomainError(f"window must be positive, got {self.window}")
        if d.size and (d.min() < 0.0 or d.max() > self.window * (1 + _OVERSHOOT_RTOL)):
            raise DomainError("pulse durations must lie within [0, window]")
        object.__setattr__(self, "durations", d)

    def __len__(self) -> int:
        return len(self.durations)


class Precision(NamedTuple):
    """Compute error ``e_c`` (fraction of the window) and bits ``p0``."""

    e_c: float
    p0: int | str


def _as_input(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError(f"input must be a vector, got shape {x.shape}")
    bad = np.flatnonzero(~((x >= 0.0) & (x <= 1.0)))
    if bad.size:
        raise DomainError(f"input x[{bad[0]}] = {x[bad[0]]!r} outside [0, 1]")
    return x


def encode_input(x: Sequence[float], t_int: float) -> PulseVector:
    x = _as_input(x)
    return PulseVector(x * t_int, t_int)


def ideal_vmm(weights: WeightPlane, x: Sequence[float]) -> np.ndarray:
    """Normalized dot products ``y_j = (1/M) sum_i w_ij x_i``."""
    x = _as_input(x)
    if len(x) != weights.m:
        raise DomainError(f"input length {len(x)} does not match M = {weights.m}")
    return weights.w.T @ x / weights.m


def column_charge(weights: WeightPlane, pulses: PulseVector, i_max: float) -> np.ndarray:
    """Phase-I charge per column, ``sum_i I_ij * dt_i`` with ``I_ij = w_ij I_max``."""
    return (weights.w * i_max).T @ pulses.durations


def time_domain_vmm(weights: WeightPlane, x: Sequence[float], dp: VmmDesignPoint) -> PulseVector:
    x = _as_input(x)
    if len(x) != weights.m:
        raise DomainError(f"input length {len(x)} does not match M = {weights.m}")
    pulses = encode_input(x, dp.t_int)
    out = column_charge(weights, pulses, dp.i_max) / (weights.m * dp.i_max)
    return PulseVector(out, dp.t_int)


def decode_output(pulses: PulseVector, t: float) -> np.ndarray:
    d = pulses.durations
    if d.size and d.max() > t * (1 + _OVERSHOOT_RTOL):
        j = int(np.argmax(d))
        raise OutputRangeError(f"output {j} duration {d[j]:.6g} s exceeds window {t:.6g} s")
    return np.clip(d, 0.0, t) / t


def signed_vmm(weights: SignedWeightPlane, x: Sequence[float], dp: VmmDesignPoint) -> np.ndarray:
    pos = decode_output(time_domain_vmm(weights.w_plus, x, dp), dp.t_int)
    neg = decode_output(time_domain_vmm(weights.w_minus, x, dp), dp.t_int)
    return pos - neg


def precision_bits(e_c: float) -> int | str:
    """Largest ``p`` with ``e_c <= 2**-(p+1)``; :data:`EXACT` when ``e_c == 0``."""
    if e_c < 0 or not math.isfinite(e_c):
        raise DomainError(f"compute error must be finite and nonnegative, got {e_c}")
    if e_c == 0:
        return EXACT
    if e_c >= 0.5:
        return 0
    return max(0, math.floor(-math.log2(e_c) - 1))


def compute_precision(ideal, actual, t: float) -> Precision:
    """Worst normalized deviation between ideal and actual output pulses.

    ``ideal`` and ``actual`` may be :class:`PulseVector` or plain arrays of
    durations (signed differential durations are allowed).
    """
    a = np.asarray(getattr(ideal, "durations", ideal), dtype=float)
    b = np.asarray(getattr(actual, "durations", actual), dtype=float)
    if a.size == 0 or b.size == 0:
        raise DomainError("compute_precision needs non-empty vectors")
    if a.shape != b.shape:
        raise DomainError(f"length mismatch: {a.shape} vs {b.shape}")
    e_c = float(np.max(np.abs(a - b))) / t
    return Precision(e_c, precision_bits(e_c))
