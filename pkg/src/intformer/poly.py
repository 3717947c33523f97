"""Second-order polynomials: integer-only evaluation and offline fitting.

``a(x + b)**2 + c`` evaluated on ``x = S*q`` becomes
``S_out * ((q + q_b)**2 + q_c)`` with ``q_b = floor(b/S)``,
``q_c = floor(c / (a S**2))`` and ``S_out = a S**2``.  The three constants
are computed once, offline; the runtime is one add, one square, one add.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import minimize_scalar
from scipy.special import erf

from .intmath import INT32_MAX, INT32_MIN, AccumulatorOverflow, fit_int32, get_overflow_policy
from .purity import OFFLINE, integer_kernel


class DegeneratePolynomial(ValueError):
    pass


@dataclass(frozen=True)
class PolyCoeffs:
    """Real coefficients of ``a(x + b)**2 + c``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a == 0:
            raise DegeneratePolynomial("a must be nonzero")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.a * (x + self.b) ** 2 + self.c


ERF_COEFFS = PolyCoeffs(-0.2888, -1.769, 1.0)
EXP_COEFFS = PolyCoeffs(0.3585, 1.353, 0.344)


@dataclass(frozen=True)
class IntPoly:
    q_b: int
    q_c: int
    S_out: float = field(metadata=OFFLINE)
    S_in: float = field(metadata=OFFLINE)
    coeffs: PolyCoeffs = field(metadata=OFFLINE)

    def error_bound(self, q):
        """Worst-case |dequantized output - real polynomial| from the two floors."""
        a, b = self.coeffs.a, self.coeffs.b
        S = self.S_in
        x = np.asarray(q, dtype=np.float64) * S
        return abs(a) * S * (S + 2 * np.abs(x + b)) + abs(a * S * S)


def _exact_floor(num: float, den: float) -> int:
    return math.floor(Fraction(num) / Fraction(den))


def compile_poly(coeffs: PolyCoeffs, S_in: float, q_range: tuple[int, int] | None = None) -> IntPoly:
    """Precompute ``q_b``, ``q_c`` and ``S_out`` for input scale ``S_in``.

    With ``q_range`` the int32 headroom of ``(q + q_b)**2 + q_c`` is proven
    for every input in the range; failure raises under the trap policy.
    """
    if coeffs.a == 0:
        raise DegeneratePolynomial("a must be nonzero")
    if not S_in > 0:
        raise ValueError(f"input scale must be positive, got {S_in}")
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    q_b = _exact_floor(b, S_in)
    aS2 = Fraction(a) * Fraction(S_in) ** 2
    q_c = math.floor(Fraction(c) / aS2)
    p = IntPoly(q_b, q_c, float(aS2), float(S_in), coeffs)
    if q_range is not None:
        lo, hi = poly_output_range(p, q_range)
        if (lo < INT32_MIN or hi > INT32_MAX) and get_overflow_policy() == "trap":
            raise AccumulatorOverflow(
                f"I-Poly output range [{lo}, {hi}] exceeds int32 for inputs {q_range}"
            )
    return p


def poly_output_range(p: IntPoly, q_range: tuple[int, int]) -> tuple[int, int]:
    lo, hi = q_range
    t_lo, t_hi = lo + p.q_b, hi + p.q_b
    sq_max = max(t_lo * t_lo, t_hi * t_hi)
    sq_min = 0 if t_lo <= 0 <= t_hi else min(t_lo * t_lo, t_hi * t_hi)
    return sq_min + p.q_c, sq_max + p.q_c


@integer_kernel
def run_poly(q, p: IntPoly):
    t = np.asanyarray(q).astype(np.int64) + p.q_b
    return fit_int32(t * t + p.q_c, "I-Poly output")


def i_poly(q, p: IntPoly):
    """Integer-only ``a(x+b)**2 + c``; returns ``(q_out, S_out)``."""
    return run_poly(q, p), p.S_out


# -- interpolation -----------------------------------------------------------


@dataclass(frozen=True)
class InterpolatingPoly:
    """Unique polynomial of degree <= n through n+1 points."""

    xs: np.ndarray
    fs: np.ndarray
    coefficients: np.ndarray  # ascending powers

    @property
    def degree(self) -> int:
        return len(self.xs) - 1

    def __call__(self, x):
        # Lagrange form; exact at the nodes since one factor is exactly zero
        x = np.asarray(x, dtype=np.float64)
        total = np.zeros_like(x)
        for i, (xi, fi) in enumerate(zip(self.xs, self.fs)):
            li = np.ones_like(x)
            for j, xj in enumerate(self.xs):
                if j != i:
                    li = li * (x - xj) / (xi - xj)
            total = total + fi * li
        return total


def lagrange_fit(points) -> InterpolatingPoly:
    pts = [(float(x), float(f)) for x, f in points]
    if not pts:
        raise ValueError("need at least one point")
    xs = np.array([p[0] for p in pts])
    fs = np.array([p[1] for p in pts])
    if len(np.unique(xs)) != len(xs):
        raise ValueError("interpolation nodes must be distinct")
    coef = np.zeros(1)
    for i in range(len(xs)):
        others = np.delete(xs, i)
        basis = P.polyfromroots(others) / np.prod(xs[i] - others)
        coef = P.polyadd(coef, fs[i] * basis)
    return InterpolatingPoly(xs, fs, np.asarray(coef, dtype=np.float64))


def interp_error_bound(f_deriv_bound: float, points, x: float) -> float:
    """Upper bound on ``|f(x) - L(x)|`` given ``max |f^(n+1)|`` on the hull."""
    pts = np.asarray(points, dtype=np.float64)
    n1 = len(pts)
    return f_deriv_bound / math.factorial(n1) * float(np.prod(np.abs(x - pts)))


def best_interpolation_nodes(f, lo: float, hi: float, degree: int = 2,
                             n_candidates: int = 41, n_eval: int = 2001):
    """Grid search over node placements minimizing the L-inf error on [lo, hi].

    Returns ``(poly, linf)``.
    """
    cand = np.linspace(lo, hi, n_candidates)
    grid = np.linspace(lo, hi, n_eval)
    target = f(grid)
    fc = f(cand)
    best = (None, math.inf)
    for idx in itertools.combinations(range(n_candidates), degree + 1):
        L = lagrange_fit(zip(cand[list(idx)], fc[list(idx)]))
        err = float(np.max(np.abs(P.polyval(grid, L.coefficients) - target)))
        if err < best[1]:
            best = (L, err)
    return best


# -- least-squares fitting ---------------------------------------------------


def fit_grid(lo: float, hi: float, n_points: int = 10_001,
             open_lo: bool = False, open_hi: bool = False) -> np.ndarray:
    """Uniform grid with open endpoints pulled in by half a step."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if n_points < 2:
        raise ValueError("need at least two grid points")
    h = (hi - lo) / (n_points - 1)
    x = lo + h * np.arange(n_points)
    x[-1] = hi
    if open_lo:
        x[0] += h / 2
    if open_hi:
        x[-1] -= h / 2
    return x


def lsq_fit_quadratic(f, lo: float, hi: float, n_points: int = 10_001,
                      open_lo: bool = False, open_hi: bool = False) -> PolyCoeffs:
    """Discrete-L2 best ``a(x+b)**2 + c`` to ``f`` on a uniform grid over [lo, hi]."""
    if n_points < 10_000:
        raise ValueError("fitting grid needs at least 10^4 points")
    x = fit_grid(lo, hi, n_points, open_lo, open_hi)
    with np.errstate(all="ignore"):
        y = np.asarray(f(x), dtype=np.float64)
    if not np.all(np.isfinite(y)):
        bad = x[~np.isfinite(y)][0]
        raise ValueError(f"f is not finite at x={bad}")
    # centred, scaled variable keeps the normal equations well conditioned
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    u = (x - mid) / half
    A = np.stack([u * u, u, np.ones_like(u)], axis=1)
    (c2, c1, c0), *_ = np.linalg.lstsq(A, y, rcond=None)
    if abs(c2) <= 1e-14 * max(abs(c1), abs(c0), 1.0):
        raise DegeneratePolynomial("best fit has no quadratic term")
    k = c1 / (2 * c2)
    return PolyCoeffs(float(c2 / half**2), float(-mid + k * half), float(c0 - c1 * c1 / (4 * c2)))


def _gelu(x):
    return x * 0.5 * (1 + erf(x / math.sqrt(2)))


def fit_erf_for_gelu(lo: float = -4.0, hi: float = 4.0, n_points: int = 8001,
                     b_bounds: tuple[float, float] = (-3.0, -1.0)) -> PolyCoeffs:
    """Fit the erf polynomial ``sgn(u)[a(min(|u|, -b) + b)**2 + 1]`` through GELU.

    Minimizes the discrete L2 distance between ``x/2 (1 + L(x/sqrt 2))`` and
    GELU on [lo, hi] with ``c`` pinned to 1.  For fixed ``b`` the problem is
    linear in ``a``, so only ``b`` is searched.
    """
    x = fit_grid(lo, hi, max(n_points, 2))
    u = x / math.sqrt(2)
    target = _gelu(x)
    s = np.sign(u)
    base = x / 2 * (1 + s)  # model value when a = 0

    def solve_a(b):
        phi = x / 2 * s * (np.minimum(np.abs(u), -b) + b) ** 2
        a = float(np.dot(phi, target - base) / np.dot(phi, phi))
        return a, float(np.sum((base + a * phi - target) ** 2))

    res = minimize_scalar(lambda b: solve_a(b)[1], bounds=b_bounds,
                          method="bounded", options={"xatol": 1e-10})
    b = float(res.x)
    return PolyCoeffs(solve_a(b)[0], b, 1.0)
