"""Double-precision references and approximation-error metrics.

The real-arithmetic forms of the integer approximations (``igelu_real``,
``iexp_real``) evaluate the same polynomials without quantization.  They
are what the GELU/exp error tables are measured on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf as _erf

from .intmath import round_half_away
from .kernels import h_gelu, i_exp, i_gelu
from .poly import ERF_COEFFS, EXP_COEFFS
from .quant import QParams, quantize

SQRT2 = math.sqrt(2.0)
LN2 = math.log(2.0)


def oracle_erf(x):
    # scipy's erf is accurate to a few ulp in double precision
    return _erf(np.asarray(x, dtype=np.float64))


def oracle_gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + _erf(x / SQRT2))


def oracle_exp(x):
    return np.exp(np.asarray(x, dtype=np.float64))


def oracle_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def oracle_layernorm(v, eps: float = 0.0, gain=None, bias=None):
    """LayerNorm over the last axis; ``eps`` is added to the variance."""
    v = np.asarray(v, dtype=np.float64)
    mu = v.mean(axis=-1, keepdims=True)
    var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
    out = (v - mu) / np.sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid_gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return x / (1.0 + np.exp(-1.702 * x))


def h_gelu_real(x):
    return h_gelu(np.asarray(x, dtype=np.float64))


def erf_poly_real(x):
    """``sgn(x) [a (min(|x|, -b) + b)**2 + 1]``."""
    x = np.asarray(x, dtype=np.float64)
    a, b, c = ERF_COEFFS.a, ERF_COEFFS.b, ERF_COEFFS.c
    return np.sign(x) * (a * (np.minimum(np.abs(x), -b) + b) ** 2 + c)


def igelu_real(x):
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf_poly_real(x / SQRT2))


def iexp_real(x):
    """Range-reduced polynomial exp for ``x <= 0``, shift done as ``2**-z``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x > 0):
        raise ValueError("i-exp is defined for non-positive inputs")
    z = np.floor(-x / LN2)
    p = x + z * LN2
    return EXP_COEFFS(p) * np.exp2(-z)


# quantized variants: real input -> integer kernel -> dequantized output


def igelu_quantized(x, bits: int = 8, alpha: float = 4.0):
    p = QParams.from_alpha(alpha, bits)
    q = quantize(x, p).data
    q_out, s_out = i_gelu(q, p.scale)
    return q_out * s_out


def iexp_quantized(x, scale: float = 1e-4):
    x = np.asarray(x, dtype=np.float64)
    q = round_half_away(x / scale)
    q_out, s_out = i_exp(q, scale)
    return q_out * s_out


@dataclass(frozen=True)
class ErrorReport:
    l2: float  # RMS over the grid
    linf: float
    lo: float
    hi: float
    n_points: int


def error_report(approx, oracle, lo: float = -4.0, hi: float = 4.0,
                 n_points: int = 8001) -> ErrorReport:
    """Deviation of ``approx`` from ``oracle`` on a uniform inclusive grid."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if n_points < 2:
        raise ValueError("need at least two grid points")
    x = np.linspace(lo, hi, n_points)
    d = np.asarray(approx(x), dtype=np.float64) - np.asarray(oracle(x), dtype=np.float64)
    bad = ~np.isfinite(d)
    if bad.any():
        raise ValueError(f"non-finite evaluation at x={x[bad][0]!r}")
    return ErrorReport(float(np.sqrt(np.mean(d * d))), float(np.max(np.abs(d))),
                       float(lo), float(hi), int(n_points))


CURVES = {
    "relu": relu,
    "gelu": oracle_gelu,
    "h_gelu": h_gelu_real,
    "i_gelu": igelu_real,
    "sigmoid_gelu": sigmoid_gelu,
    "exp": oracle_exp,
    "i_exp": iexp_real,
}


def curve_dump(functions, lo: float, hi: float, n_points: int):
    """Rows ``(x, f_1(x), ..., f_k(x))``; ``functions`` are names in CURVES
    or ``(name, callable)`` pairs.  Returns ``(header, rows)``."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if n_points < 2:
        raise ValueError("need at least two grid points")
    named = []
    for f in functions:
        if isinstance(f, str):
            if f not in CURVES:
                raise KeyError(f"unknown curve {f!r}")
            named.append((f, CURVES[f]))
        else:
            named.append(f)
    x = np.linspace(lo, hi, n_points)
    cols = [np.asarray(fn(x), dtype=np.float64) for _, fn in named]
    header = ["x"] + [name for name, _ in named]
    rows = np.column_stack([x] + cols)
    return header, rows
