"""Single transformer encoder layer run entirely on integers.

Dataflow (T tokens, H hidden, h heads, F feed-forward)::

    x(8) -> Q,K,V matmuls -> requant(8) -> Q K^T -> requant(16, folds 1/sqrt d)
         -> i-softmax -> requant(8) -> P V -> requant(8) -> out proj
         -> requant(16, residual scale) + requant(x) -> i-LayerNorm -> affine
         -> requant(8) -> FFN1 -> requant(8) -> i-GELU -> requant(8) -> FFN2
         -> requant(16) + requant(ln1) -> i-LayerNorm -> affine -> requant(8)

All scales are calibrated offline against the float reference layer and
folded into integer plans by :func:`compile_encoder`; :func:`run_encoder`
touches only integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .intmath import fit_int32, int_range, round_half_away
from .kernels import (
    GeluPlan,
    LayerNormParams,
    SoftmaxPlan,
    compile_gelu,
    compile_softmax,
    run_gelu,
    run_layernorm,
    run_layernorm_affine,
    run_softmax,
)
from .oracles import oracle_gelu, oracle_layernorm, oracle_softmax
from .purity import OFFLINE, integer_kernel, traced, untraced
from .quant import (
    QParams,
    QTensor,
    RequantPlan,
    apply_requant,
    calibrate,
    dequantize,
    quantize,
    requant_plan,
)

LINEARS = ("wq", "wk", "wv", "wo", "w1", "w2")
# edge name -> bit width on the integer path
EDGE_BITS = {
    "x": 8, "q": 8, "k": 8, "v": 8, "scores": 16, "probs": 8, "ctx": 8,
    "attn": 32, "res1": 16, "ln1": 8, "ffn_h": 8, "gelu": 8, "ffn": 32,
    "res2": 16, "out": 8,
}
# lower bound on the pre-softmax clip range; keeps the i-exp square in int32
MIN_SCORE_ALPHA = 2.0
REF_EPS = 1e-12


@dataclass(frozen=True)
class AttentionConfig:
    heads: int
    seq_len: int
    hidden: int

    def __post_init__(self):
        if self.heads < 1 or self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def softmax_scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)


@dataclass(frozen=True)
class EncoderDims:
    T: int = 16
    H: int = 64
    heads: int = 4
    F: int = 256

    def __post_init__(self):
        if min(self.T, self.H, self.heads, self.F) < 1:
            raise ValueError("dimensions must be positive")
        AttentionConfig(self.heads, self.T, self.H)

    @classmethod
    def parse(cls, text: str) -> "EncoderDims":
        """Parse ``TxHxhxF`` (e.g. ``16x64x4x256``)."""
        parts = text.lower().split("x")
        if len(parts) != 4:
            raise ValueError(f"dims must look like TxHxhxF, got {text!r}")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError as e:
            raise ValueError(f"bad dims {text!r}: {e}") from None

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.heads, self.T, self.H)


@dataclass(frozen=True)
class FloatParams:
    """Real-valued layer parameters; matrices are (in, out)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    @classmethod
    def random(cls, dims: EncoderDims, rng: np.random.Generator) -> "FloatParams":
        H, F = dims.H, dims.F

        def mat(i, o):
            return rng.normal(0.0, 1.0 / math.sqrt(i), (i, o))

        def vec(n, s=0.02):
            return rng.normal(0.0, s, n)

        return cls(
            mat(H, H), mat(H, H), mat(H, H), mat(H, H), mat(H, F), mat(F, H),
            vec(H), vec(H), vec(H), vec(H), vec(F), vec(H),
            1.0 + vec(H, 0.1), vec(H), 1.0 + vec(H, 0.1), vec(H),
        )


@dataclass(frozen=True)
class EncoderWeights:
    """Quantized layer: 8-bit weights, int32 biases, LayerNorm params and a
    static QParams for every activation edge."""

    dims: EncoderDims
    weights: dict  # name -> QTensor (8-bit, per tensor)
    biases: dict  # name -> real bias (float reference)
    bias_q: dict  # name -> int32 bias at S_in * S_w
    ln1: LayerNormParams
    ln2: LayerNormParams
    ln_real: dict  # ln1_gain, ln1_bias, ln2_gain, ln2_bias
    act: dict  # edge -> QParams

    def check(self) -> None:
        T, H, F = self.dims.T, self.dims.H, self.dims.F
        shapes = {"wq": (H, H), "wk": (H, H), "wv": (H, H), "wo": (H, H),
                  "w1": (H, F), "w2": (F, H)}
        for name, shp in shapes.items():
            if self.weights[name].shape != shp:
                raise ValueError(f"{name} has shape {self.weights[name].shape}, want {shp}")
            if self.weights[name].params.bits != 8:
                raise ValueError(f"{name} must be 8-bit")
        missing = set(EDGE_BITS) - set(self.act)
        if missing:
            raise ValueError(f"uncalibrated edges: {sorted(missing)}")


_BIAS_OF = {"wq": "bq", "wk": "bk", "wv": "bv", "wo": "bo", "w1": "b1", "w2": "b2"}
_INPUT_EDGE = {"wq": "x", "wk": "x", "wv": "x", "wo": "ctx", "w1": "ln1", "w2": "gelu"}


def quantize_weights(fp: FloatParams) -> dict:
    out = {}
    for name in LINEARS:
        w = getattr(fp, name)
        out[name] = quantize(w, calibrate([w], 8))
    return out


# -- float reference ---------------------------------------------------------


def _split_heads(x, heads):
    T, H = x.shape[-2:]
    return x.reshape(*x.shape[:-2], T, heads, H // heads).swapaxes(-2, -3)


def _merge_heads(x):
    *lead, h, T, d = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, T, h * d)


def fp32_reference_layer(x, w, capture: dict | None = None, eps: float = REF_EPS):
    """Double-precision layer on dequantized weights with exact nonlinearities.

    ``w`` is an :class:`EncoderWeights` or a ``(weights, FloatParams)`` pair
    during calibration.  ``capture`` receives every activation edge.
    """
    if isinstance(w, EncoderWeights):
        mats = {n: dequantize(w.weights[n]) for n in LINEARS}
        bias = w.biases
        ln = w.ln_real
        heads = w.dims.heads
    else:
        qweights, fp = w
        mats = {n: dequantize(qweights[n]) for n in LINEARS}
        bias = {b: getattr(fp, b) for b in _BIAS_OF.values()}
        ln = {k: getattr(fp, k) for k in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")}
        heads = qweights["_heads"]
    x = np.asarray(x, dtype=np.float64)
    cap = capture if capture is not None else {}
    cap["x"] = x
    q = x @ mats["wq"] + bias["bq"]
    k = x @ mats["wk"] + bias["bk"]
    v = x @ mats["wv"] + bias["bv"]
    cap.update(q=q, k=k, v=v)
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    d = q.shape[-1] // heads
    scores = qh @ kh.swapaxes(-1, -2) / math.sqrt(d)
    probs = oracle_softmax(scores)
    ctx = _merge_heads(probs @ vh)
    attn = ctx @ mats["wo"] + bias["bo"]
    cap.update(scores=scores, probs=probs, ctx=ctx, attn=attn)
    res1 = x + attn
    ln1 = oracle_layernorm(res1, eps, ln["ln1_gain"], ln["ln1_bias"])
    h = ln1 @ mats["w1"] + bias["b1"]
    g = oracle_gelu(h)
    ffn = g @ mats["w2"] + bias["b2"]
    res2 = ln1 + ffn
    out = oracle_layernorm(res2, eps, ln["ln2_gain"], ln["ln2_bias"])
    cap.update(res1=res1, ln1=ln1, ffn_h=h, gelu=g, ffn=ffn, res2=res2, out=out)
    return out


def calibrate_encoder(fp: FloatParams, dims: EncoderDims, samples) -> EncoderWeights:
    """Quantize weights and fix every activation scale from calibration samples."""
    qw = quantize_weights(fp)
    qw_h = dict(qw, _heads=dims.heads)
    caps: dict[str, list] = {}
    for s in samples:
        cap: dict = {}
        fp32_reference_layer(s, (qw_h, fp), capture=cap)
        for k, v in cap.items():
            caps.setdefault(k, []).append(v)
    alphas = {k: float(max(np.max(np.abs(a)) for a in v)) for k, v in caps.items()}
    act = {}
    for edge, bits in EDGE_BITS.items():
        if edge in ("res1", "res2", "attn", "ffn", "probs", "scores"):
            continue
        act[edge] = QParams.from_alpha(alphas[edge], bits)
    act["probs"] = QParams.from_alpha(1.0, 8)
    act["scores"] = QParams.from_alpha(max(alphas["scores"], MIN_SCORE_ALPHA), 16)
    # residual branches share a scale with headroom for their sum
    act["attn"] = QParams.from_alpha(alphas["attn"], 32)
    act["ffn"] = QParams.from_alpha(alphas["ffn"], 32)
    act["res1"] = QParams.from_alpha(2 * max(alphas["x"], alphas["attn"]), 16)
    act["res2"] = QParams.from_alpha(2 * max(alphas["ln1"], alphas["ffn"]), 16)
    bias_q = {}
    for name in LINEARS:
        s = act[_INPUT_EDGE[name]].scale * qw[name].params.scale
        b = getattr(fp, _BIAS_OF[name])
        bias_q[_BIAS_OF[name]] = fit_int32(round_half_away(b / s)).astype(np.int32)
    w = EncoderWeights(
        dims=dims,
        weights=qw,
        biases={b: getattr(fp, b) for b in _BIAS_OF.values()},
        bias_q=bias_q,
        ln1=LayerNormParams.from_real(fp.ln1_gain, fp.ln1_bias),
        ln2=LayerNormParams.from_real(fp.ln2_gain, fp.ln2_bias),
        ln_real={k: getattr(fp, k) for k in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")},
        act=act,
    )
    w.check()
    return w


# -- integer path ------------------------------------------------------------


@integer_kernel
def run_matmul(a, b, bias=None):
    """INT8 x INT8 products accumulated exactly; int32 result."""
    acc = np.asanyarray(a).astype(np.int64) @ np.asanyarray(b).astype(np.int64)
    if bias is not None:
        acc = acc + np.asanyarray(bias).astype(np.int64)
    return fit_int32(acc, "matmul accumulator").astype(np.int32)


def int_matmul(A: QTensor, B: QTensor, bias=None) -> QTensor:
    """Integer GEMM; output scale ``S_A * S_B``.  ``bias`` must be int32 at that scale."""
    if A.shape[-1] != B.shape[-2]:
        raise ValueError(f"inner dimensions differ: {A.shape} @ {B.shape}")
    out = run_matmul(A.data, B.data, bias)
    return QTensor(out, QParams.from_scale(A.scale * B.scale, 32))


@dataclass(frozen=True)
class EncoderPlan:
    """Every integer constant the layer needs at inference time."""

    heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    rq: dict  # edge -> RequantPlan
    softmax: SoftmaxPlan
    gelu: GeluPlan
    ln1: LayerNormParams
    ln2: LayerNormParams
    out_params: QParams = field(metadata=OFFLINE)


def compile_encoder(w: EncoderWeights) -> EncoderPlan:
    """Offline: fold all scales into dyadic multipliers and kernel constants."""
    w.check()
    a = w.act
    S = {n: w.weights[n].params.scale for n in LINEARS}
    att = w.dims.attention
    gelu_plan = compile_gelu(a["ffn_h"].scale, a["ffn_h"].qmax)
    ln_scale1 = w.ln1.gain_scale * 2.0**-w.ln1.frac_bits
    ln_scale2 = w.ln2.gain_scale * 2.0**-w.ln2.frac_bits
    rq = {
        "q": requant_plan(a["x"].scale * S["wq"], a["q"]),
        "k": requant_plan(a["x"].scale * S["wk"], a["k"]),
        "v": requant_plan(a["x"].scale * S["wv"], a["v"]),
        "scores": requant_plan(a["q"].scale * a["k"].scale, a["scores"], att.softmax_scale),
        "probs": requant_plan(2.0**-15, a["probs"]),
        "ctx": requant_plan(a["probs"].scale * a["v"].scale, a["ctx"]),
        "attn": requant_plan(a["ctx"].scale * S["wo"], a["res1"]),
        "x_res": requant_plan(a["x"].scale, a["res1"]),
        "ln1": requant_plan(ln_scale1, a["ln1"]),
        "ffn_h": requant_plan(a["ln1"].scale * S["w1"], a["ffn_h"]),
        "gelu": requant_plan(gelu_plan.S_out, a["gelu"]),
        "ffn": requant_plan(a["gelu"].scale * S["w2"], a["res2"]),
        "ln1_res": requant_plan(a["ln1"].scale, a["res2"]),
        "out": requant_plan(ln_scale2, a["out"]),
    }
    return EncoderPlan(
        w.dims.heads,
        *(w.weights[n].data for n in LINEARS),
        *(w.bias_q[b] for b in ("bq", "bk", "bv", "bo", "b1", "b2")),
        rq=rq,
        softmax=compile_softmax(a["scores"].scale),
        gelu=gelu_plan,
        ln1=w.ln1,
        ln2=w.ln2,
        out_params=a["out"],
    )


def _add_sat(a, b, bits=16):
    lo, hi = int_range(bits)
    # saturating add keeps the LayerNorm variance inside int32
    return np.clip(a.astype(np.int32) + b.astype(np.int32), lo, hi)


def _log(trace, op, inputs, output, bits):
    if trace is not None:
        trace.append((op, tuple(inputs), output, bits))


def _attention(x, p: EncoderPlan, trace):
    mm, rq = run_matmul, apply_requant
    q = rq(mm(x, p.wq, p.bq), p.rq["q"])
    k = rq(mm(x, p.wk, p.bk), p.rq["k"])
    v = rq(mm(x, p.wv, p.bv), p.rq["v"])
    for name, w in (("q", "wq"), ("k", "wk"), ("v", "wv")):
        _log(trace, "matmul", ["x", w], f"{name}_acc", 32)
        _log(trace, "requantize", [f"{name}_acc"], name, 8)
    qh, kh, vh = (_split_heads(t, p.heads) for t in (q, k, v))
    scores = rq(mm(qh, kh.swapaxes(-1, -2)), p.rq["scores"])
    _log(trace, "matmul", ["q", "k"], "scores_acc", 32)
    _log(trace, "requantize", ["scores_acc"], "scores", 16)
    probs = rq(run_softmax(scores, p.softmax), p.rq["probs"])
    _log(trace, "softmax", ["scores"], "probs_fx", 32)
    _log(trace, "requantize", ["probs_fx"], "probs", 8)
    ctx = rq(_merge_heads(mm(probs, vh)), p.rq["ctx"])
    _log(trace, "matmul", ["probs", "v"], "ctx_acc", 32)
    _log(trace, "requantize", ["ctx_acc"], "ctx", 8)
    attn = mm(ctx, p.wo, p.bo)
    _log(trace, "matmul", ["ctx", "wo"], "attn", 32)
    return attn


@integer_kernel
def run_attention(x, p: EncoderPlan, trace=None):
    return _attention(np.asanyarray(x), p, trace)


@integer_kernel
def run_encoder(x, p: EncoderPlan, trace=None):
    """Integer encoder layer: int8 (T, H) in, int8 (T, H) out."""
    mm, rq = run_matmul, apply_requant
    x = np.asanyarray(x)
    attn = _attention(x, p, trace)
    res1 = _add_sat(rq(attn, p.rq["attn"]), rq(x, p.rq["x_res"]))
    _log(trace, "requantize", ["attn"], "attn_res", 16)
    _log(trace, "requantize", ["x"], "x_res", 16)
    _log(trace, "add", ["attn_res", "x_res"], "res1", 16)
    ln1 = rq(run_layernorm_affine(run_layernorm(res1, p.ln1), p.ln1), p.rq["ln1"])
    _log(trace, "layernorm", ["res1"], "ln1_acc", 32)
    _log(trace, "requantize", ["ln1_acc"], "ln1", 8)
    h = rq(mm(ln1, p.w1, p.b1), p.rq["ffn_h"])
    _log(trace, "matmul", ["ln1", "w1"], "ffn_h_acc", 32)
    _log(trace, "requantize", ["ffn_h_acc"], "ffn_h", 8)
    g = rq(run_gelu(h, p.gelu), p.rq["gelu"])
    _log(trace, "gelu", ["ffn_h"], "gelu_acc", 32)
    _log(trace, "requantize", ["gelu_acc"], "gelu", 8)
    ffn = mm(g, p.w2, p.b2)
    _log(trace, "matmul", ["gelu", "w2"], "ffn", 32)
    res2 = _add_sat(rq(ffn, p.rq["ffn"]), rq(ln1, p.rq["ln1_res"]))
    _log(trace, "requantize", ["ffn"], "ffn_res", 16)
    _log(trace, "requantize", ["ln1"], "ln1_res", 16)
    _log(trace, "add", ["ffn_res", "ln1_res"], "res2", 16)
    out = rq(run_layernorm_affine(run_layernorm(res2, p.ln2), p.ln2), p.rq["out"])
    _log(trace, "layernorm", ["res2"], "out_acc", 32)
    _log(trace, "requantize", ["out_acc"], "out", 8)
    return out


def self_attention(x: QTensor, w: EncoderWeights, plan: EncoderPlan | None = None) -> QTensor:
    """Multi-head self-attention; returns the int32 output-projection accumulator."""
    if x.shape[-1] != w.dims.H:
        raise ValueError(f"expected hidden size {w.dims.H}, got {x.shape}")
    plan = plan or compile_encoder(w)
    out = untraced(run_attention(traced(x.data), plan))
    a = w.act
    return QTensor(out, QParams.from_scale(a["ctx"].scale * w.weights["wo"].params.scale, 32))


def encoder_layer(x: QTensor, w: EncoderWeights, plan: EncoderPlan | None = None,
                  trace: list | None = None) -> QTensor:
    """Full integer layer on an 8-bit (T, H) input quantized at ``w.act["x"]``."""
    if x.shape[-1] != w.dims.H:
        raise ValueError(f"expected hidden size {w.dims.H}, got {x.shape}")
    if x.params != w.act["x"]:
        raise ValueError("input must be quantized with the calibrated input QParams")
    plan = plan or compile_encoder(w)
    out = untraced(run_encoder(traced(x.data), plan, trace))
    return QTensor(np.asarray(out), w.act["out"])


def quantize_input(x, w: EncoderWeights) -> QTensor:
    return quantize(x, w.act["x"])


def build_demo(dims: EncoderDims, seed: int = 0, n_calib: int = 128):
    """Random weights and inputs: returns ``(weights, float_params, rng)``."""
    rng = np.random.default_rng(seed)
    fp = FloatParams.random(dims, rng)
    calib = [rng.normal(0.0, 1.0, (dims.T, dims.H)) for _ in range(n_calib)]
    return calibrate_encoder(fp, dims, calib), fp, rng


def relative_l2(approx, ref) -> float:
    approx, ref = np.asarray(approx, float), np.asarray(ref, float)
    return float(np.linalg.norm(approx - ref) / np.linalg.norm(ref))
