"""Wall-clock comparison of the integer kernels against float32 numpy.

NumPy has no int8 GEMM path, so integer matmuls here run through int64
and are slower than BLAS float32.  The numbers are honest for this host;
they say nothing about integer hardware.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .encoder import run_matmul
from .kernels import (
    LayerNormParams,
    compile_exp,
    compile_gelu,
    compile_softmax,
    run_exp,
    run_gelu,
    run_layernorm,
    run_softmax,
)
from .oracles import oracle_gelu, oracle_layernorm, oracle_softmax

MIN_REPS = 30


@dataclass(frozen=True)
class BenchRow:
    op: str
    size: str
    int_median_ns: float
    float_median_ns: float
    speedup: float  # float time / int time


def parse_size(size) -> tuple[int, ...]:
    if isinstance(size, int):
        return (size,)
    if isinstance(size, str):
        try:
            dims = tuple(int(s) for s in size.lower().split("x"))
        except ValueError:
            raise ValueError(f"bad size {size!r}") from None
    else:
        dims = tuple(int(s) for s in size)
    if not dims or min(dims) < 1:
        raise ValueError(f"sizes must be positive, got {size!r}")
    return dims


def _setup(op, shape, rng):
    """Return ``(int_fn, float_fn)`` closures over fresh inputs."""
    if op == "gemm":
        if len(shape) != 3:
            raise ValueError("gemm size must be MxKxN")
        M, K, N = shape
        a = rng.integers(-127, 128, (M, K), dtype=np.int8)
        b = rng.integers(-127, 128, (K, N), dtype=np.int8)
        af, bf = a.astype(np.float32), b.astype(np.float32)
        return (lambda: run_matmul(a, b)), (lambda: af @ bf)
    if op == "gelu":
        S = 4 / 127
        plan = compile_gelu(S, 127)
        q = rng.integers(-127, 128, shape)
        x = (q * S).astype(np.float32)
        return (lambda: run_gelu(q, plan)), (lambda: oracle_gelu(x))
    if op == "exp":
        S = 1e-3
        plan = compile_exp(S)
        q = -rng.integers(0, 10_000, shape)
        x = (q * S).astype(np.float32)
        return (lambda: run_exp(q, plan)), (lambda: np.exp(x))
    if op == "softmax":
        S = 1e-3
        plan = compile_softmax(S)
        q = rng.integers(-5000, 5000, shape)
        x = (q * S).astype(np.float32)
        return (lambda: run_softmax(q, plan)), (lambda: oracle_softmax(x))
    if op == "layernorm":
        params = LayerNormParams.identity(shape[-1])
        q = rng.integers(-20_000, 20_000, shape)
        x = q.astype(np.float32)
        return (lambda: run_layernorm(q, params)), (lambda: oracle_layernorm(x, 1.0))
    raise ValueError(f"unknown op {op!r}; choose from {', '.join(OPS)}")


OPS = ("gemm", "gelu", "exp", "softmax", "layernorm")


def _median_ns(fn, reps):
    fn()  # warm-up
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return float(statistics.median(times))


def microbench(op: str, sizes, repetitions: int = MIN_REPS, seed: int = 0) -> list[BenchRow]:
    if repetitions < MIN_REPS:
        raise ValueError(f"need at least {MIN_REPS} repetitions, got {repetitions}")
    if op not in OPS:
        raise ValueError(f"unknown op {op!r}; choose from {', '.join(OPS)}")
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        shape = parse_size(size)
        int_fn, float_fn = _setup(op, shape, rng)
        ti = _median_ns(int_fn, repetitions)
        tf = _median_ns(float_fn, repetitions)
        rows.append(BenchRow(op, "x".join(map(str, shape)), ti, tf, tf / ti))
    return rows


def write_csv(rows, fh) -> None:
    w = csv.writer(fh)
    w.writerow(["op", "size", "int_median_ns", "float_median_ns", "speedup"])
    for r in rows:
        d = asdict(r)
        w.writerow([d["op"], d["size"], f"{d['int_median_ns']:.0f}",
                    f"{d['float_median_ns']:.0f}", f"{d['speedup']:.4g}"])
