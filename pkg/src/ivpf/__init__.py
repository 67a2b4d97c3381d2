"""Lossless compression with numerically invertible volume-preserving flows."""
from .codec import (CodecConfig, CodelengthReport, codelength_report, compress, compress_many,
                    decode, decompress, decompress_many, encode, flow_forward, flow_inverse)
from .errors import (IVPFError, LatentOutOfSupport, ModelError, PrecisionOverflow,
                     StreamError)
from .fixnum import QuantScalar, QuantVector, quantize, quantize_array, to_real
from .mat import compute_moduli, mat_forward, mat_inverse
from .model import FlowModel, continuous_eval, load, random_init, save

__version__ = "0.1.0"

__all__ = [
    "CodecConfig", "CodelengthReport", "FlowModel", "IVPFError", "LatentOutOfSupport",
    "ModelError", "PrecisionOverflow", "QuantScalar", "QuantVector", "StreamError",
    "codelength_report", "compress", "compress_many", "compute_moduli", "continuous_eval",
    "decode", "decompress", "decompress_many", "encode", "flow_forward", "flow_inverse",
    "load", "mat_forward", "mat_inverse", "quantize", "quantize_array", "random_init",
    "save", "to_real",
]
