"""Uniform symmetric static quantization.

Scales are real metadata fixed before inference; the only runtime work is
integer: rounding happens once when real data enters the quantized domain,
and rescaling between integer domains goes through a dyadic multiplier
(32-bit mantissa plus right shift).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .intmath import int_range, rshift_round, round_half_away
from .purity import OFFLINE, integer_kernel

SUPPORTED_BITS = (8, 16, 32)

_DTYPES = {8: np.int8, 16: np.int16, 32: np.int32}


class InvalidData(ValueError):
    """Real-valued input that cannot be quantized (NaN or infinity)."""


def qmax(bits: int) -> int:
    return (1 << (bits - 1)) - 1


@dataclass(frozen=True)
class QParams:
    """Quantization metadata: bit width, clipping bound and scale.

    ``scale * (2**(bits-1) - 1)`` equals ``alpha`` to within one ulp.
    Use :meth:`from_alpha` or :meth:`from_scale` rather than the raw
    constructor.
    """

    bits: int
    alpha: float
    scale: float

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if abs(self.scale * qmax(self.bits) - self.alpha) > math.ulp(self.alpha):
            raise ValueError("scale and alpha are inconsistent")

    @classmethod
    def from_alpha(cls, alpha: float, bits: int = 8) -> "QParams":
        alpha = float(alpha)
        if not (math.isfinite(alpha) and alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {alpha}")
        scale = alpha / qmax(bits)
        # re-derive alpha so the pair is consistent to the last bit
        return cls(bits, scale * qmax(bits), scale)

    @classmethod
    def from_scale(cls, scale: float, bits: int = 32) -> "QParams":
        scale = float(scale)
        return cls(bits, scale * qmax(bits), scale)

    @property
    def qmin(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def qmax(self) -> int:
        return qmax(self.bits)

    @property
    def dtype(self):
        return _DTYPES[self.bits]


@dataclass(frozen=True)
class QTensor:
    """Integer payload plus its quantization parameters."""

    data: np.ndarray
    params: QParams = field(metadata=OFFLINE)

    def __post_init__(self):
        d = self.data
        if not np.issubdtype(d.dtype, np.integer):
            raise TypeError(f"QTensor payload must be integer, got {d.dtype}")
        if d.size:
            lo, hi = int_range(self.params.bits)
            if d.min() < lo or d.max() > hi:
                raise ValueError(
                    f"payload outside the {self.params.bits}-bit range [{lo}, {hi}]"
                )

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def scale(self) -> float:
        return self.params.scale


def quantize(x, params: QParams) -> QTensor:
    """``round(clip(x, -alpha, alpha) / S)`` with ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidData("cannot quantize non-finite values")
    clipped = np.clip(x, -params.alpha, params.alpha)
    q = round_half_away(clipped / params.scale)
    # alpha/S can land one ulp above qmax
    q = np.clip(q, -params.qmax, params.qmax)
    return QTensor(q.astype(params.dtype), params)


def dequantize(t: QTensor) -> np.ndarray:
    return t.data.astype(np.float64) * t.params.scale


@dataclass(frozen=True)
class Dyadic:
    """Fixed-point multiplier ``mult * 2**-shift`` with a 32-bit mantissa."""

    mult: int
    shift: int
    value: float = field(metadata=OFFLINE)

    @classmethod
    def from_real(cls, m: float) -> "Dyadic":
        if not (math.isfinite(m) and m > 0):
            raise ValueError(f"multiplier must be positive and finite, got {m}")
        frac, exp = math.frexp(m)  # m = frac * 2**exp, frac in [0.5, 1)
        mult = int(round(frac * (1 << 31)))
        if mult == 1 << 31:
            mult >>= 1
            exp += 1
        return cls(mult, 31 - exp, m)


@dataclass(frozen=True)
class RequantPlan:
    """Precomputed rescale from one integer domain to a narrower one."""

    multiplier: Dyadic
    out_bits: int
    in_scale: float = field(metadata=OFFLINE)
    out_params: QParams = field(metadata=OFFLINE)


def requant_plan(in_scale: float, out_params: QParams, extra: float = 1.0) -> RequantPlan:
    """Offline setup: fold ``in_scale * extra / out_scale`` into a dyadic multiplier."""
    if not out_params.scale > 0:
        raise ValueError("output scale must be positive")
    if not in_scale > 0:
        raise ValueError("input scale must be positive")
    mult = Dyadic.from_real(in_scale * extra / out_params.scale)
    return RequantPlan(mult, out_params.bits, in_scale, out_params)


@integer_kernel
def apply_requant(q, plan: RequantPlan):
    """Runtime rescale: one integer multiply, one rounded shift, one clamp."""
    q = np.asanyarray(q).astype(np.int64)
    lo, hi = int_range(plan.out_bits)
    m, s = plan.multiplier.mult, plan.multiplier.shift
    if s <= 0:
        # multiplier >= 2**31: every nonzero input saturates
        out = np.where(q > 0, hi, np.where(q < 0, lo, 0))
    elif s > 62:
        # multiplier below 2**-31 and |q| < 2**31: product rounds to zero
        out = q * 0
    else:
        out = rshift_round(q * m, s)
    return np.clip(out, lo, hi).astype(_DTYPES[plan.out_bits])


def requantize(t: QTensor, out_params: QParams, extra: float = 1.0) -> QTensor:
    """Rescale ``t`` to ``out_params``: ``round(q * S_in * extra / S_out)``, clipped.

    ``extra`` folds an additional constant (the attention 1/sqrt(d)) into
    the multiplier.
    """
    if not out_params.scale > 0:
        raise ValueError("output scale must be positive")
    plan = requant_plan(t.params.scale, out_params, extra)
    return QTensor(apply_requant(t.data, plan), out_params)


def calibrate(samples, bits: int = 8, percentile: float | None = None) -> QParams:
    """Derive static QParams from calibration samples.

    ``alpha`` is the max absolute value, or the given percentile of
    absolute values when ``percentile`` is set (e.g. 99.9).
    """
    if isinstance(samples, np.ndarray):
        arrays = [samples]
    else:
        arrays = [np.asarray(s, dtype=np.float64) for s in samples]
    flat = (
        np.concatenate([np.ravel(a) for a in arrays]).astype(np.float64)
        if arrays
        else np.empty(0)
    )
    if flat.size == 0:
        raise ValueError("calibration needs at least one sample value")
    if not np.all(np.isfinite(flat)):
        raise InvalidData("calibration samples contain non-finite values")
    mags = np.abs(flat)
    alpha = float(mags.max() if percentile is None else np.percentile(mags, percentile))
    if alpha == 0.0:
        raise ValueError("all-zero calibration data cannot define a scale")
    return QParams.from_alpha(alpha, bits)
