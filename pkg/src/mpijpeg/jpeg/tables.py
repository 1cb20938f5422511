"""Constant tables for baseline JPEG (ITU-T T.81 Annex K) plus quality scaling.

The quantization tables, zigzag order, and Huffman table specifications here
are the standard example tables; both the bit-exact codec and the
differentiable simulation read from this module so the two paths cannot
drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import MpiJpegError

# Annex K.1 luminance quantization table (row-major).
BASE_LUMA_QUANT = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

# Annex K.2 chrominance quantization table.
BASE_CHROMA_QUANT = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)

# Zigzag scan: ZIGZAG[k] = flat row-major index of the k-th coefficient.
ZIGZAG = np.array(
    [
        0, 1, 8, 16, 9, 2, 3, 10,
        17, 24, 32, 25, 18, 11, 4, 5,
        12, 19, 26, 33, 40, 48, 41, 34,
        27, 20, 13, 6, 7, 14, 21, 28,
        35, 42, 49, 56, 57, 50, 43, 36,
        29, 22, 15, 23, 30, 37, 44, 51,
        58, 59, 52, 45, 38, 31, 39, 46,
        53, 60, 61, 54, 47, 55, 62, 63,
    ],
    dtype=np.int64,
)

# Inverse permutation: UNZIGZAG[flat row-major index] = zigzag position.
UNZIGZAG = np.argsort(ZIGZAG)

# Annex K.3 Huffman table specs: (bits[1..16] code-length counts, values).
LUMA_DC_BITS = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
LUMA_DC_VALUES = list(range(12))

CHROMA_DC_BITS = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
CHROMA_DC_VALUES = list(range(12))

LUMA_AC_BITS = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 125]
LUMA_AC_VALUES = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12,
    0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08,
    0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16,
    0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39,
    0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
    0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79,
    0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98,
    0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
    0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
    0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5,
    0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4,
    0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA,
    0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
]

CHROMA_AC_BITS = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 119]
CHROMA_AC_VALUES = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21,
    0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91,
    0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0,
    0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34,
    0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38,
    0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
    0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78,
    0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96,
    0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
    0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
    0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
    0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2,
    0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9,
    0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
]

# BT.601 full-range RGB <-> YCbCr, the JFIF convention. The decode matrix is
# the exact algebraic inverse of the encode matrix so a float round trip
# through both is lossless up to rounding error.
_KR, _KG, _KB = 0.299, 0.587, 0.114
RGB_TO_YCBCR = np.array(
    [
        [_KR, _KG, _KB],
        [-0.5 * _KR / (1 - _KB), -0.5 * _KG / (1 - _KB), 0.5],
        [0.5, -0.5 * _KG / (1 - _KR), -0.5 * _KB / (1 - _KR)],
    ],
    dtype=np.float64,
)
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)

# Orthonormal 8x8 DCT-II basis; dct_2d(b) = DCT_MATRIX @ b @ DCT_MATRIX.T.
# With this normalization the transform matches the T.81 definition
# (1/4)C(u)C(v) sum f(x,y) cos(...) exactly.
_k = np.arange(8)
DCT_MATRIX = np.cos((2 * _k[None, :] + 1) * _k[:, None] * np.pi / 16) / 2.0
DCT_MATRIX[0, :] = 1.0 / np.sqrt(8.0)


class ChromaSubsampling(str, Enum):
    """Supported chroma layouts: full resolution or 2x2 subsampled."""

    YUV444 = "4:4:4"
    YUV420 = "4:2:0"


@dataclass(frozen=True)
class JpegConfig:
    quality: int = 90
    chroma_subsampling: ChromaSubsampling = ChromaSubsampling.YUV420

    def __post_init__(self):
        if not 1 <= self.quality <= 100:
            raise MpiJpegError(f"JPEG quality must be in [1, 100], got {self.quality}")
        # Tolerate the plain string forms "4:4:4" / "4:2:0".
        if not isinstance(self.chroma_subsampling, ChromaSubsampling):
            object.__setattr__(
                self, "chroma_subsampling", ChromaSubsampling(self.chroma_subsampling)
            )


@dataclass(frozen=True)
class QuantTables:
    luma: np.ndarray
    chroma: np.ndarray

    def __post_init__(self):
        for name, table in (("luma", self.luma), ("chroma", self.chroma)):
            if table.shape != (8, 8):
                raise MpiJpegError(f"{name} quantization table must be 8x8")
            if table.min() < 1 or table.max() > 255:
                raise MpiJpegError(f"{name} quantization entries must be in [1, 255]")


def quant_tables_for_quality(quality: int) -> QuantTables:
    """Scale the Annex K tables by the conventional linear quality rule.

    quality 50 returns the base tables; quality 100 collapses every entry
    to 1 (lossless quantization up to rounding).
    """
    if not 1 <= quality <= 100:
        raise MpiJpegError(f"JPEG quality must be in [1, 100], got {quality}")
    if quality < 50:
        scale = 5000 // quality
    else:
        scale = 200 - 2 * quality

    def scaled(base):
        table = (base * scale + 50) // 100
        return np.clip(table, 1, 255).astype(np.int64)

    return QuantTables(luma=scaled(BASE_LUMA_QUANT), chroma=scaled(BASE_CHROMA_QUANT))
