"""Integer-only transformer inference: quantization, polynomial kernels,
integer LayerNorm and an int8 encoder layer, with float references."""

from .quant import QParams, QTensor, calibrate, dequantize, quantize, requantize
from .poly import PolyCoeffs, IntPoly, compile_poly, i_poly, lagrange_fit, lsq_fit_quadratic
from .kernels import (
    LayerNormParams,
    h_gelu,
    i_erf,
    i_exp,
    i_gelu,
    i_layernorm,
    i_softmax,
    i_sqrt,
)
from .encoder import (
    EncoderDims,
    EncoderWeights,
    compile_encoder,
    encoder_layer,
    fp32_reference_layer,
    int_matmul,
    self_attention,
)
from .purity import FloatOpMonitor

__all__ = [
    "QParams", "QTensor", "calibrate", "dequantize", "quantize", "requantize",
    "PolyCoeffs", "IntPoly", "compile_poly", "i_poly", "lagrange_fit", "lsq_fit_quadratic",
    "LayerNormParams", "h_gelu", "i_erf", "i_exp", "i_gelu", "i_layernorm",
    "i_softmax", "i_sqrt",
    "EncoderDims", "EncoderWeights", "compile_encoder", "encoder_layer",
    "fp32_reference_layer", "int_matmul", "self_attention", "FloatOpMonitor",
]
