"""Integer arithmetic helpers shared by the quantizer and the kernels.

All rounding here is round-half-away-from-zero. Overflow of the 32-bit
accumulator is handled by a process-wide policy: ``"trap"`` raises
:class:`AccumulatorOverflow`, ``"saturate"`` clamps to the int32 bounds.
"""

from __future__ import annotations

import contextlib
import contextvars
import os

import numpy as np

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


class AccumulatorOverflow(OverflowError):
    """An intermediate left the signed 32-bit range under the trap policy."""


_default_policy = "saturate" if os.environ.get("INTFORMER_RELEASE") else "trap"
_policy: contextvars.ContextVar[str] = contextvars.ContextVar(
    "overflow_policy", default=_default_policy
)


def get_overflow_policy() -> str:
    return _policy.get()


def set_overflow_policy(policy: str) -> None:
    if policy not in ("trap", "saturate"):
        raise ValueError(f"unknown overflow policy {policy!r}")
    _policy.set(policy)


@contextlib.contextmanager
def overflow_policy(policy: str):
    """Temporarily switch the overflow policy (``"trap"`` or ``"saturate"``)."""
    if policy not in ("trap", "saturate"):
        raise ValueError(f"unknown overflow policy {policy!r}")
    token = _policy.set(policy)
    try:
        yield
    finally:
        _policy.reset(token)


def int_range(bits: int) -> tuple[int, int]:
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def fit_int32(x, what: str = "accumulator"):
    """Return ``x`` (int64 array) checked against the int32 range.

    Traps or saturates according to the active overflow policy.
    """
    x = np.asanyarray(x)
    if x.size == 0:
        return x
    lo, hi = x.min(), x.max()
    if lo >= INT32_MIN and hi <= INT32_MAX:
        return x
    if _policy.get() == "trap":
        bad = int(hi) if hi > INT32_MAX else int(lo)
        raise AccumulatorOverflow(f"{what} overflows int32 (value {bad})")
    return np.clip(x, INT32_MIN, INT32_MAX)


def round_half_away(v):
    """Round real values to the nearest integer, ties away from zero.

    Uses trunc + fractional comparison; ``floor(|v| + 0.5)`` misrounds
    0.49999999999999994.
    """
    v = np.asarray(v, dtype=np.float64)
    t = np.trunc(v)
    frac = np.abs(v - t)
    return (t + np.sign(v) * (frac >= 0.5)).astype(np.int64)


def div_round(num, den: int):
    """Integer division rounded to nearest, ties away from zero (den > 0)."""
    num = np.asanyarray(num)
    mag = (np.abs(num) + den // 2) // den
    return np.where(num < 0, -mag, mag)


def rshift_round(x, shift: int):
    """Arithmetic right shift with round-half-away-from-zero.

    ``shift`` is a non-negative Python int; ``x`` an int64 array.
    """
    x = np.asanyarray(x)
    if shift == 0:
        return x
    half = 1 << (shift - 1)
    mag = (np.abs(x) + half) >> shift
    return np.where(x < 0, -mag, mag)
