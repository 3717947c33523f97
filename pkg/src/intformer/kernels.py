"""Integer-only nonlinear kernels: erf/GELU, exp/Softmax, square root, LayerNorm.

Every kernel is split in two.  ``compile_*`` runs offline with real
arithmetic and produces a frozen plan of integer constants (plus scale
metadata tagged OFFLINE).  ``run_*`` is the inference-time body and only
ever sees integers.  The ``i_*`` wrappers combine both for convenience and
return ``(q_out, S_out)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .intmath import (
    INT32_MAX,
    AccumulatorOverflow,
    div_round,
    fit_int32,
    get_overflow_policy,
    round_half_away,
)
from .poly import ERF_COEFFS, EXP_COEFFS, IntPoly, compile_poly, poly_output_range, run_poly
from .purity import OFFLINE, integer_kernel
from .quant import QParams, QTensor

LN2 = math.log(2.0)
SOFTMAX_FRAC_BITS = 15
LAYERNORM_FRAC_BITS = 10
LAYERNORM_EPS = 1
MAX_EXP_SHIFT = 30
ISQRT_MAX_ITER = 64


def _check_int32_bound(bound: int, what: str) -> None:
    if bound > INT32_MAX and get_overflow_policy() == "trap":
        raise AccumulatorOverflow(f"{what} can reach {bound}, beyond int32")


# -- erf / GELU --------------------------------------------------------------


@dataclass(frozen=True)
class ErfPlan:
    q_clip: int
    poly: IntPoly
    S_out: float = field(metadata=OFFLINE)


def compile_erf(S: float) -> ErfPlan:
    if not S > 0:
        raise ValueError(f"scale must be positive, got {S}")
    b = ERF_COEFFS.b
    q_clip = math.floor(-b / S)
    poly = compile_poly(ERF_COEFFS, S, q_range=(0, q_clip))
    return ErfPlan(q_clip, poly, poly.S_out)


@integer_kernel
def run_erf(q, plan: ErfPlan):
    q = np.asanyarray(q).astype(np.int64)
    sgn = np.sign(q)
    mag = np.minimum(np.abs(q), plan.q_clip)
    return sgn * run_poly(mag, plan.poly)


def i_erf(q, S: float):
    """Integer erf of ``x = S*q``.

    The output scale is ``a*S**2`` with ``a < 0``, so ``S_out`` is negative;
    ``q_out * S_out`` is the approximation.  Exactly odd: sgn(0) = 0.
    """
    plan = compile_erf(S)
    return run_erf(q, plan), plan.S_out


@dataclass(frozen=True)
class GeluPlan:
    erf: ErfPlan
    q_one: int
    flip: int  # +1 or -1, folds a negative erf scale into the integers
    S_out: float = field(metadata=OFFLINE)


def compile_gelu(S: float, q_max: int | None = None) -> GeluPlan:
    """Offline setup for i-GELU on inputs ``|q| <= q_max``."""
    erf_plan = compile_erf(S / math.sqrt(2))
    S_erf = erf_plan.S_out
    q_one = math.floor(1 / S_erf)
    S_raw = S * S_erf / 2
    flip = -1 if S_raw < 0 else 1
    if q_max is not None:
        lo, hi = poly_output_range(erf_plan.poly, (0, erf_plan.q_clip))
        erf_mag = max(abs(lo), abs(hi))
        _check_int32_bound(q_max * (erf_mag + abs(q_one)), "i-GELU product")
    return GeluPlan(erf_plan, q_one, flip, abs(S_raw))


@integer_kernel
def run_gelu(q, plan: GeluPlan):
    q = np.asanyarray(q).astype(np.int64)
    q_erf = run_erf(q, plan.erf)
    out = q * (q_erf + plan.q_one)
    if plan.flip < 0:
        out = -out
    return fit_int32(out, "i-GELU product")


def i_gelu(q, S: float):
    """Integer GELU of ``x = S*q``; returns ``(q_out, S_out)`` with ``S_out > 0``."""
    q = np.asanyarray(q)
    q_max = int(np.max(np.abs(q))) if q.size else 0
    plan = compile_gelu(S, q_max)
    return run_gelu(q, plan), plan.S_out


@dataclass(frozen=True)
class HGeluPlan:
    q_offset: int
    q_six: int
    S_out: float = field(metadata=OFFLINE)


HGELU_SLOPE = 1.702


def compile_h_gelu(S: float) -> HGeluPlan:
    # x ReLU6(1.702x + 3)/6 = (1.702/6) x clip(x + 3/1.702, 0, 6/1.702)
    q_offset = int(round_half_away(3 / (HGELU_SLOPE * S)))
    q_six = int(round_half_away(6 / (HGELU_SLOPE * S)))
    return HGeluPlan(q_offset, q_six, S * S * HGELU_SLOPE / 6)


@integer_kernel
def run_h_gelu(q, plan: HGeluPlan):
    q = np.asanyarray(q).astype(np.int64)
    t = np.clip(q + plan.q_offset, 0, plan.q_six)
    return fit_int32(q * t, "h-GELU product")


def h_gelu(x):
    """h-GELU baseline ``x * ReLU6(1.702x + 3) / 6``.

    Real input gives a real result; a :class:`QTensor` input is evaluated
    with integers and returns a 32-bit QTensor.
    """
    if isinstance(x, QTensor):
        plan = compile_h_gelu(x.params.scale)
        return QTensor(run_h_gelu(x.data, plan).astype(np.int32),
                       QParams.from_scale(plan.S_out, 32))
    x = np.asarray(x, dtype=np.float64)
    return x * np.clip(HGELU_SLOPE * x + 3, 0, 6) / 6


# -- exp / Softmax -----------------------------------------------------------


@dataclass(frozen=True)
class ExpPlan:
    q_ln2: int
    poly: IntPoly
    max_shift: int = MAX_EXP_SHIFT
    S_out: float = field(default=0.0, metadata=OFFLINE)


def compile_exp(S: float) -> ExpPlan:
    if not S > 0:
        raise ValueError(f"scale must be positive, got {S}")
    q_ln2 = math.floor(LN2 / S)
    if q_ln2 < 1:
        raise ValueError(f"scale {S} is coarser than ln 2; range reduction impossible")
    poly = compile_poly(EXP_COEFFS, S, q_range=(-q_ln2 + 1, 0))
    return ExpPlan(q_ln2, poly, MAX_EXP_SHIFT, poly.S_out)


@integer_kernel
def run_exp(q, plan: ExpPlan):
    q = np.asanyarray(q).astype(np.int64)
    if q.size and q.max() > 0:
        raise ValueError("i-exp needs non-positive inputs")
    z = (-q) // plan.q_ln2
    q_p = q + z * plan.q_ln2  # in (-q_ln2, 0]
    q_l = run_poly(q_p, plan.poly)
    return q_l >> np.minimum(z, plan.max_shift)


def i_exp(q, S: float):
    """Integer ``exp(S*q)`` for ``q <= 0`` via ln2 range reduction and a shift."""
    plan = compile_exp(S)
    return run_exp(q, plan), plan.S_out


@dataclass(frozen=True)
class SoftmaxPlan:
    exp: ExpPlan
    frac_bits: int = SOFTMAX_FRAC_BITS
    S_out: float = field(default=2.0**-SOFTMAX_FRAC_BITS, metadata=OFFLINE)


def compile_softmax(S: float, frac_bits: int = SOFTMAX_FRAC_BITS) -> SoftmaxPlan:
    return SoftmaxPlan(compile_exp(S), frac_bits, 2.0**-frac_bits)


@integer_kernel
def run_softmax(q, plan: SoftmaxPlan, axis: int = -1):
    q = np.asanyarray(q).astype(np.int64)
    if q.size == 0 or q.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = q - q.max(axis=axis, keepdims=True)
    q_exp = run_exp(shifted, plan.exp)
    total = q_exp.sum(axis=axis, keepdims=True)
    # 64-bit numerator: q_exp < 2**31, times 2**frac_bits
    return (q_exp << plan.frac_bits) // total


def i_softmax(q, S: float, axis: int = -1):
    """Integer softmax along ``axis``; output is fixed point with ``S_out = 2**-15``."""
    plan = compile_softmax(S)
    return run_softmax(q, plan, axis), plan.S_out


# -- square root / LayerNorm -------------------------------------------------


def isqrt_iter(n: int) -> tuple[int, int]:
    """``floor(sqrt(n))`` by integer Newton iteration; returns ``(root, updates)``.

    ``updates`` counts evaluations of the averaging step, including the one
    that triggers the stop test.
    """
    n = int(n)
    if n < 0:
        raise ValueError("square root of a negative integer")
    if n == 0:
        return 0, 0
    x = 1 << ((n.bit_length() + 1) // 2)
    for i in range(1, ISQRT_MAX_ITER + 1):
        nxt = (x + n // x) >> 1
        if nxt >= x:
            return x, i
        x = nxt
    raise RuntimeError(f"integer sqrt did not converge for n={n}")


def i_sqrt(n: int) -> int:
    return isqrt_iter(n)[0]


def _bit_length(n):
    v = n.copy()
    bl = np.zeros_like(n)
    for s in (32, 16, 8, 4, 2, 1):
        big = v >= (1 << s)
        v = np.where(big, v >> s, v)
        bl = bl + big * s
    return bl + (v > 0)


@integer_kernel
def i_sqrt_array(n):
    """Vectorized :func:`i_sqrt` over an int64 array; returns ``(roots, updates)``."""
    n = np.asanyarray(n).astype(np.int64)
    if n.size and n.min() < 0:
        raise ValueError("square root of a negative integer")
    x = np.left_shift(1, (_bit_length(n) + 1) // 2)
    safe_n = n
    done = n == 0
    x = np.where(done, 0, x)
    updates = np.zeros_like(n)
    for _ in range(ISQRT_MAX_ITER):
        if done.all():
            return x, updates
        active = ~done
        xs = np.where(active, x, 1)
        nxt = (xs + safe_n // xs) >> 1
        updates = updates + active
        stop = active & (nxt >= x)
        done = done | stop
        x = np.where(active & ~stop, nxt, x)
    if not done.all():
        raise RuntimeError("integer sqrt did not converge")
    return x, updates


@dataclass(frozen=True)
class LayerNormParams:
    """Per-channel affine parameters and fixed-point settings.

    ``gain_q`` is 8-bit at ``gain_scale``; ``bias_q`` is 32-bit at
    ``gain_scale * 2**-frac_bits`` so it adds straight onto the product.
    """

    channels: int
    gain_q: np.ndarray
    bias_q: np.ndarray
    frac_bits: int = LAYERNORM_FRAC_BITS
    eps: int = LAYERNORM_EPS
    gain_scale: float = field(default=1.0, metadata=OFFLINE)

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("LayerNorm needs at least one channel")
        if len(self.gain_q) != self.channels or len(self.bias_q) != self.channels:
            raise ValueError("gain and bias must have one entry per channel")

    @classmethod
    def identity(cls, channels: int, **kw) -> "LayerNormParams":
        return cls(channels, np.ones(channels, np.int8), np.zeros(channels, np.int32), **kw)

    @classmethod
    def from_real(cls, gain, bias, frac_bits: int = LAYERNORM_FRAC_BITS,
                  eps: int = LAYERNORM_EPS) -> "LayerNormParams":
        gain = np.asarray(gain, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        alpha = float(np.max(np.abs(gain))) or 1.0
        gp = QParams.from_alpha(alpha, 8)
        g_q = np.clip(round_half_away(gain / gp.scale), -127, 127).astype(np.int8)
        b_q = round_half_away(bias / (gp.scale * 2.0**-frac_bits)).astype(np.int32)
        return cls(len(gain), g_q, b_q, frac_bits, eps, gp.scale)


@integer_kernel
def run_layernorm(q, params: LayerNormParams):
    """Normalize along the last axis; output fixed point at ``2**-frac_bits``."""
    q = np.asanyarray(q).astype(np.int64)
    C = q.shape[-1]
    if C != params.channels:
        raise ValueError(f"expected {params.channels} channels, got {C}")
    mu = div_round(q.sum(axis=-1, keepdims=True), C)
    d = q - mu
    var = (d * d).sum(axis=-1, keepdims=True) // C
    sigma, _ = i_sqrt_array(fit_int32(var + params.eps, "LayerNorm variance"))
    return (d << params.frac_bits) // sigma


@integer_kernel
def run_layernorm_affine(q_norm, params: LayerNormParams):
    q_norm = np.asanyarray(q_norm).astype(np.int64)
    return fit_int32(q_norm * params.gain_q.astype(np.int64) + params.bias_q,
                     "LayerNorm affine")


def i_layernorm(q, S: float, params: LayerNormParams):
    """Integer LayerNorm (pre-affine) of ``x = S*q`` over the last axis.

    The result does not depend on ``S``; ``S_out = 2**-frac_bits``.
    """
    if params.channels == 0:
        raise ValueError("LayerNorm over zero channels")
    return run_layernorm(q, params), 2.0**-params.frac_bits


def layernorm_affine(q_norm, params: LayerNormParams):
    """Apply the quantized gain and bias; returns ``(q, S)`` in the int32 domain."""
    return run_layernorm_affine(q_norm, params), params.gain_scale * 2.0**-params.frac_bits
