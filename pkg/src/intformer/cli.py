"""Command-line front end.

Exit codes: 0 success, 1 a self-check failed, 2 bad usage.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import bench
from .encoder import (
    EncoderDims,
    build_demo,
    compile_encoder,
    encoder_layer,
    fp32_reference_layer,
    quantize_input,
    relative_l2,
)
from .kernels import ISQRT_MAX_ITER, i_sqrt_array
from .oracles import (
    curve_dump,
    error_report,
    h_gelu_real,
    iexp_real,
    igelu_real,
    oracle_exp,
    oracle_gelu,
    sigmoid_gelu,
)
from .poly import ERF_COEFFS, EXP_COEFFS, fit_erf_for_gelu, lsq_fit_quadratic
from .purity import FloatOpMonitor
from .quant import dequantize

GELU_RANGE = (-4.0, 4.0)
EXP_RANGE = (-10.0, 0.0)
ENCODER_BUDGET = 5e-2


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    lo: float | None = None
    hi: float | None = None
    points: int | None = None
    seed: int = 0
    out: str | None = None
    dims: EncoderDims = EncoderDims()
    samples: int = 128

    def interval(self, default):
        lo = default[0] if self.lo is None else self.lo
        hi = default[1] if self.hi is None else self.hi
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise UsageError(f"need finite lo < hi, got [{lo}, {hi}]")
        return lo, hi

    def grid(self, default):
        n = default if self.points is None else self.points
        if n < 2:
            raise UsageError(f"--points must be at least 2, got {n}")
        return n


def _fmt(v) -> str:
    return f"{v:.15g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])


def _table(header, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


# -- commands ----------------------------------------------------------------


def cmd_approx_error(cfg: RunConfig, function: str = "all") -> int:
    rows = []
    if function in ("gelu", "all"):
        lo, hi = cfg.interval(GELU_RANGE)
        n = cfg.grid(8001)
        gelu_rows = []
        for name, fn, int_only in [("sigmoid-GELU", sigmoid_gelu, "no"),
                                   ("h-GELU", h_gelu_real, "yes"),
                                   ("i-GELU", igelu_real, "yes")]:
            r = error_report(fn, oracle_gelu, lo, hi, n)
            gelu_rows.append((name, int_only, r.l2, r.linf))
        rows += gelu_rows
        rms = {name: l2 for name, _, l2, _ in gelu_rows}
        if not rms["i-GELU"] < rms["sigmoid-GELU"] < rms["h-GELU"]:
            raise CheckFailed("expected RMS ordering i-GELU < sigmoid-GELU < h-GELU")
    if function in ("exp", "all"):
        lo, hi = cfg.interval(EXP_RANGE) if function == "exp" else EXP_RANGE
        if hi > 0:
            raise UsageError("i-exp is defined for x <= 0 only")
        n = cfg.grid(100_001) if function == "exp" else 100_001
        r = error_report(iexp_real, oracle_exp, lo, hi, n)
        rows.append(("i-exp", "yes", r.l2, r.linf))
    _table(["method", "int-only", "L2 (RMS)", "Linf"],
           [(m, i, f"{l2:.6g}", f"{li:.6g}") for m, i, l2, li in rows])
    if cfg.out:
        _write_csv(cfg.out, ["method", "int_only", "l2_rms", "linf"], rows)
    return 0


CURVE_SETS = {"gelu": ["relu", "gelu", "h_gelu", "i_gelu"], "exp": ["exp", "i_exp"]}


def cmd_curves(cfg: RunConfig, function: str = "gelu") -> int:
    names = CURVE_SETS[function]
    lo, hi = cfg.interval(GELU_RANGE if function == "gelu" else (-4.0, 0.0))
    n = cfg.grid(801)
    header, rows = curve_dump(names, lo, hi, n)
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[_fmt(v) for v in r] for r in rows])
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows([[_fmt(v) for v in r] for r in rows])
    return 0


def isqrt_verify(exhaustive_max: int = 1 << 20, n_random: int = 1_000_000, seed: int = 0):
    """Return ``(failures, max_updates, histogram)`` over the test set."""
    rng = np.random.default_rng(seed)
    failures, max_u, hist = 0, 0, {}
    chunks = [np.arange(0, exhaustive_max + 1, dtype=np.int64),
              rng.integers(0, 2**31, n_random, dtype=np.int64)]
    for n in chunks:
        r, u = i_sqrt_array(n)
        r = r.astype(np.int64)
        bad = ~((r * r <= n) & (n < (r + 1) * (r + 1)))
        failures += int(bad.sum())
        max_u = max(max_u, int(u.max()))
        vals, counts = np.unique(u, return_counts=True)
        for v, c in zip(vals.tolist(), counts.tolist()):
            hist[v] = hist.get(v, 0) + c
    return failures, max_u, hist


def cmd_isqrt_verify(cfg: RunConfig) -> int:
    failures, max_u, hist = isqrt_verify(seed=cfg.seed)
    print(f"checked [0, 2^20] exhaustively plus 10^6 random int32 values (seed {cfg.seed})")
    print(f"correctness failures: {failures}")
    print(f"max Newton updates:   {max_u} (claim in the literature: at most four)")
    print("updates histogram:    " + ", ".join(f"{k}:{v}" for k, v in sorted(hist.items())))
    if cfg.out:
        _write_csv(cfg.out, ["updates", "count"], [(str(k), v) for k, v in sorted(hist.items())])
    if failures or max_u > ISQRT_MAX_ITER:
        raise CheckFailed("integer square root failed verification")
    return 0


def encoder_demo(dims: EncoderDims, seed: int = 0, n_calib: int = 128, n_eval: int = 32):
    """Return ``(max relative L2, max abs deviation, float ops seen)``."""
    w, _, rng = build_demo(dims, seed, n_calib)
    plan = compile_encoder(w)
    rel, mad, float_ops = [], 0.0, 0
    for _ in range(n_eval):
        xq = quantize_input(rng.normal(0.0, 1.0, (dims.T, dims.H)), w)
        with FloatOpMonitor() as mon:
            out = encoder_layer(xq, w, plan)
        float_ops += len(mon.float_ops)
        ref = fp32_reference_layer(dequantize(xq), w)
        got = dequantize(out)
        rel.append(relative_l2(got, ref))
        mad = max(mad, float(np.max(np.abs(got - ref))))
    return max(rel), mad, float_ops


def cmd_encoder_demo(cfg: RunConfig) -> int:
    if cfg.samples < 1:
        raise UsageError("--samples must be positive")
    d = cfg.dims
    rel, mad, fops = encoder_demo(d, cfg.seed, cfg.samples)
    print(f"dims T={d.T} H={d.H} heads={d.heads} F={d.F}, seed {cfg.seed}, "
          f"{cfg.samples} calibration samples, 32 held-out inputs")
    print(f"max relative L2 vs float reference: {rel:.6g} (budget {ENCODER_BUDGET:g})")
    print(f"max abs deviation:                  {mad:.6g}")
    print(f"float ops in integer path:          {fops}")
    if cfg.out:
        _write_csv(cfg.out, ["metric", "value"],
                   [("rel_l2", rel), ("max_abs", mad), ("float_ops", float(fops))])
    if fops or rel > ENCODER_BUDGET:
        raise CheckFailed("encoder demo outside its accuracy or purity budget")
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    n = cfg.grid(10_001)
    if n < 10_000:
        raise UsageError("--points must be at least 10000 for fitting")
    exp_fit = lsq_fit_quadratic(np.exp, -math.log(2), 0.0, n, open_lo=True)
    erf_free = lsq_fit_quadratic(erf, 0.0, -ERF_COEFFS.b, n)
    erf_gelu = fit_erf_for_gelu()
    rows = [
        ("exp on (-ln2, 0]", exp_fit, EXP_COEFFS),
        ("erf on [0, 1.769], free c", erf_free, ERF_COEFFS),
        ("erf through GELU, c = 1", erf_gelu, ERF_COEFFS),
    ]
    table = []
    for name, got, ref in rows:
        table.append((name, f"{got.a:.6g}", f"{got.b:.6g}", f"{got.c:.6g}",
                      f"({ref.a:g}, {ref.b:g}, {ref.c:g})"))
    _table(["fit", "a", "b", "c", "published"], table)
    if cfg.out:
        _write_csv(cfg.out, ["fit", "a", "b", "c"],
                   [(name, got.a, got.b, got.c) for name, got, _ in rows])

    def close(u, v):
        return abs(u - v) / abs(v) <= 0.02

    ok = all(close(g, r) for g, r in zip((exp_fit.a, exp_fit.b, exp_fit.c),
                                         (EXP_COEFFS.a, EXP_COEFFS.b, EXP_COEFFS.c)))
    ok &= close(erf_gelu.b, ERF_COEFFS.b)
    if not ok:
        raise CheckFailed("fitted coefficients more than 2% from the published constants")
    return 0


def cmd_bench(cfg: RunConfig, op: str, sizes: list[str], reps: int) -> int:
    try:
        rows = bench.microbench(op, sizes, reps, cfg.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    _table(["op", "size", "int median ns", "float median ns", "speedup"],
           [(r.op, r.size, f"{r.int_median_ns:.0f}", f"{r.float_median_ns:.0f}",
             f"{r.speedup:.3g}") for r in rows])
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            bench.write_csv(rows, fh)
    return 0


# -- argument parsing --------------------------------------------------------


def _dims(s):
    try:
        return EncoderDims.parse(s)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--lo", type=float)
    common.add_argument("--hi", type=float)
    common.add_argument("--points", type=int)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="write CSV here")
    common.add_argument("--dims", type=_dims, default=EncoderDims(), metavar="TxHxhxF")
    common.add_argument("--samples", type=int, default=128, help="calibration samples")

    p = argparse.ArgumentParser(prog="intformer", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("approx-error", parents=[common], help="approximation error table")
    a.add_argument("--function", choices=["gelu", "exp", "all"], default="all")
    c = sub.add_parser("curves", parents=[common], help="dump curve data as CSV")
    c.add_argument("--function", choices=sorted(CURVE_SETS), default="gelu")
    sub.add_parser("isqrt-verify", parents=[common], help="verify the integer square root")
    sub.add_parser("encoder-demo", parents=[common], help="integer vs float encoder layer")
    sub.add_parser("fit", parents=[common], help="least-squares coefficient fits")
    b = sub.add_parser("bench", parents=[common], help="integer vs float kernel timings")
    b.add_argument("--op", default="gemm", choices=bench.OPS)
    b.add_argument("--sizes", nargs="+", default=["128x768x768"])
    b.add_argument("--reps", type=int, default=bench.MIN_REPS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    cfg = RunConfig(ns.command, ns.lo, ns.hi, ns.points, ns.seed, ns.out, ns.dims, ns.samples)
    try:
        if ns.command == "approx-error":
            return cmd_approx_error(cfg, ns.function)
        if ns.command == "curves":
            return cmd_curves(cfg, ns.function)
        if ns.command == "isqrt-verify":
            return cmd_isqrt_verify(cfg)
        if ns.command == "encoder-demo":
            return cmd_encoder_demo(cfg)
        if ns.command == "fit":
            return cmd_fit(cfg)
        return cmd_bench(cfg, ns.op, ns.sizes, ns.reps)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CheckFailed as e:
        print(f"check failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
