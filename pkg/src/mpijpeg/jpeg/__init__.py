"""Baseline JPEG codec plus its differentiable twin."""

from .codec import jpeg_decode, jpeg_encode, roundtrip
from .simulate import jpeg_simulate, quantize_8bit, round_ste
from .tables import ChromaSubsampling, JpegConfig, QuantTables, quant_tables_for_quality

__all__ = [
    "ChromaSubsampling",
    "JpegConfig",
    "QuantTables",
    "jpeg_decode",
    "jpeg_encode",
    "jpeg_simulate",
    "quant_tables_for_quality",
    "quantize_8bit",
    "round_ste",
    "roundtrip",
]
