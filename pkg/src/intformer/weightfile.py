"""On-disk format for a quantized encoder layer.

A JSON manifest lists every tensor (name, dtype, shape, bit width, scale,
byte offset, byte length) plus the layer dims and activation QParams.  The
payloads live in a sibling little-endian binary blob, each tensor starting
on a 64-byte boundary.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encoder import LINEARS, EncoderDims, EncoderWeights
from .kernels import LayerNormParams
from .quant import QParams, QTensor

FORMAT = "intformer-weights"
VERSION = 1
ALIGN = 64


class WeightFileError(ValueError):
    pass


def _entries(w: EncoderWeights):
    for n in LINEARS:
        t = w.weights[n]
        yield n, t.data, t.params.bits, t.params.scale
    for n, b in w.bias_q.items():
        yield f"{n}_q", b, 32, None
    for n, b in w.biases.items():
        yield n, np.asarray(b, np.float64), None, None
    for n, v in w.ln_real.items():
        yield n, np.asarray(v, np.float64), None, None
    for tag, ln in (("ln1", w.ln1), ("ln2", w.ln2)):
        yield f"{tag}_gain_q", ln.gain_q, 8, ln.gain_scale
        yield f"{tag}_bias_q", ln.bias_q, 32, ln.gain_scale * 2.0**-ln.frac_bits


def save_weights(w: EncoderWeights, path) -> Path:
    """Write ``path`` (manifest) and ``path.with_suffix('.bin')`` (blob)."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    tensors, chunks, offset = [], [], 0
    for name, arr, bits, scale in _entries(w):
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        pad = (-offset) % ALIGN
        chunks.append(b"\0" * pad + raw)
        offset += pad
        tensors.append({
            "name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
            "bits": bits, "scale": scale, "offset": offset, "nbytes": len(raw),
        })
        offset += len(raw)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "blob": blob_path.name,
        "dims": {"T": w.dims.T, "H": w.dims.H, "heads": w.dims.heads, "F": w.dims.F},
        "activations": {k: {"bits": p.bits, "alpha": p.alpha, "scale": p.scale}
                        for k, p in w.act.items()},
        "layernorm": {"ln1": {"frac_bits": w.ln1.frac_bits, "eps": w.ln1.eps},
                      "ln2": {"frac_bits": w.ln2.frac_bits, "eps": w.ln2.eps}},
        "tensors": tensors,
    }
    blob_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_weights(path) -> EncoderWeights:
    path = Path(path)
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise WeightFileError(f"manifest is not valid JSON: {e}") from None
    if m.get("format") != FORMAT or m.get("version") != VERSION:
        raise WeightFileError(f"unsupported manifest format {m.get('format')!r} v{m.get('version')}")
    blob = (path.parent / m["blob"]).read_bytes()
    arrays, meta = {}, {}
    for t in m["tensors"]:
        end = t["offset"] + t["nbytes"]
        if t["offset"] % ALIGN or end > len(blob):
            raise WeightFileError(f"tensor {t['name']} lies outside the blob or is misaligned")
        dt = np.dtype(t["dtype"])
        a = np.frombuffer(blob, dtype=dt, count=t["nbytes"] // dt.itemsize, offset=t["offset"])
        if a.size != int(np.prod(t["shape"], dtype=np.int64)):
            raise WeightFileError(f"tensor {t['name']} size does not match its shape")
        arrays[t["name"]] = a.reshape(t["shape"]).astype(dt.newbyteorder("="))
        meta[t["name"]] = t
    dims = EncoderDims(**m["dims"])
    weights = {n: QTensor(arrays[n], QParams.from_scale(meta[n]["scale"], meta[n]["bits"]))
               for n in LINEARS}
    lns = {}
    for tag in ("ln1", "ln2"):
        cfg = m["layernorm"][tag]
        g = arrays[f"{tag}_gain_q"]
        lns[tag] = LayerNormParams(len(g), g, arrays[f"{tag}_bias_q"], cfg["frac_bits"],
                                   cfg["eps"], meta[f"{tag}_gain_q"]["scale"])
    w = EncoderWeights(
        dims=dims,
        weights=weights,
        biases={b: arrays[b] for b in ("bq", "bk", "bv", "bo", "b1", "b2")},
        bias_q={b: arrays[f"{b}_q"] for b in ("bq", "bk", "bv", "bo", "b1", "b2")},
        ln1=lns["ln1"],
        ln2=lns["ln2"],
        ln_real={k: arrays[k] for k in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")},
        act={k: QParams(v["bits"], v["alpha"], v["scale"]) for k, v in m["activations"].items()},
    )
    w.check()
    return w
