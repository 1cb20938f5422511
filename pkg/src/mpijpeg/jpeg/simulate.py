"""Differentiable JPEG: the same arithmetic as the bit-exact codec, in torch.

Every rounding site (the initial 8-bit quantization, the DCT coefficient
quantization) uses the straight-through estimator: forward rounds, backward
passes gradients unchanged. The end-to-end forward output therefore matches
``jpeg_decode(jpeg_encode(x))`` up to the final float->int conversion that
only the bit-exact decoder performs, and the backward pass is the gradient
of the rounding-free pipeline.
"""

from __future__ import annotations

import numpy as np
import torch

from ..errors import ShapeError
from .tables import (
    ChromaSubsampling,
    DCT_MATRIX,
    JpegConfig,
    RGB_TO_YCBCR,
    YCBCR_TO_RGB,
    quant_tables_for_quality,
)


class _RoundSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return torch.round(x)

    @staticmethod
    def backward(ctx, grad):
        return grad


def round_ste(x: torch.Tensor) -> torch.Tensor:
    """Round to nearest integer; identity gradient."""
    return _RoundSTE.apply(x)


def quantize_8bit(image: torch.Tensor) -> torch.Tensor:
    """Snap an image in [0,1] to the 1/255 grid with a straight-through round."""
    return round_ste(image * 255.0) / 255.0


def _pad_replicate(x: torch.Tensor, mult: int) -> torch.Tensor:
    """Edge-replicate the last two dims of (..., H, W) up to multiples of mult."""
    h, w = x.shape[-2], x.shape[-1]
    ph, pw = (-h) % mult, (-w) % mult
    if ph:
        x = torch.cat([x, x[..., -1:, :].expand(*x.shape[:-2], ph, w)], dim=-2)
    if pw:
        x = torch.cat([x, x[..., :, -1:].expand(*x.shape[:-2], h + ph, pw)], dim=-1)
    return x


def _blockify(plane: torch.Tensor) -> torch.Tensor:
    """(..., H, W) -> (..., H/8, W/8, 8, 8)."""
    h, w = plane.shape[-2], plane.shape[-1]
    lead = plane.shape[:-2]
    return (
        plane.reshape(*lead, h // 8, 8, w // 8, 8)
        .transpose(-3, -2)
    )


def _unblockify(blocks: torch.Tensor) -> torch.Tensor:
    nh, nw = blocks.shape[-4], blocks.shape[-3]
    lead = blocks.shape[:-4]
    return blocks.transpose(-3, -2).reshape(*lead, nh * 8, nw * 8)


def _pad_edge1(x: torch.Tensor) -> torch.Tensor:
    x = torch.cat([x[..., :1, :], x, x[..., -1:, :]], dim=-2)
    return torch.cat([x[..., :, :1], x, x[..., :, -1:]], dim=-1)


def _upsample_2x_triangular(plane: torch.Tensor) -> torch.Tensor:
    """Torch twin of codec.upsample_2x_triangular (9:3:3:1 weights)."""
    p = _pad_edge1(plane)
    c = p[..., 1:-1, 1:-1]
    up, down = p[..., :-2, 1:-1], p[..., 2:, 1:-1]
    left, right = p[..., 1:-1, :-2], p[..., 1:-1, 2:]
    ul, ur = p[..., :-2, :-2], p[..., :-2, 2:]
    dl, dr = p[..., 2:, :-2], p[..., 2:, 2:]
    ee = (9 * c + 3 * left + 3 * up + ul) / 16.0
    eo = (9 * c + 3 * right + 3 * up + ur) / 16.0
    oe = (9 * c + 3 * left + 3 * down + dl) / 16.0
    oo = (9 * c + 3 * right + 3 * down + dr) / 16.0
    h, w = plane.shape[-2], plane.shape[-1]
    lead = plane.shape[:-2]
    row_e = torch.stack([ee, eo], dim=-1).reshape(*lead, h, 2 * w)
    row_o = torch.stack([oe, oo], dim=-1).reshape(*lead, h, 2 * w)
    return torch.stack([row_e, row_o], dim=-2).reshape(*lead, 2 * h, 2 * w)


def jpeg_simulate(image: torch.Tensor, cfg: JpegConfig = JpegConfig()) -> torch.Tensor:
    """Differentiable JPEG round trip on a (..., H, W, 3) image in [0,1]."""
    if image.shape[-1] != 3:
        raise ShapeError(f"expected channel-last RGB image, got shape {tuple(image.shape)}")
    h, w = image.shape[-3], image.shape[-2]
    if h < 8 or w < 8:
        raise ShapeError(f"image must be at least 8x8, got {h}x{w}")

    dtype, device = image.dtype, image.device
    sub420 = cfg.chroma_subsampling is ChromaSubsampling.YUV420
    tabs = quant_tables_for_quality(cfg.quality)
    dct = torch.as_tensor(DCT_MATRIX, dtype=dtype, device=device)
    to_ycc = torch.as_tensor(RGB_TO_YCBCR, dtype=dtype, device=device)
    to_rgb = torch.as_tensor(YCBCR_TO_RGB, dtype=dtype, device=device)
    offset = torch.tensor([0.0, 128.0, 128.0], dtype=dtype, device=device)

    u8 = round_ste(image * 255.0)
    ycc = u8 @ to_ycc.T + offset
    ycc = ycc.movedim(-1, 0)  # (3, ..., H, W)
    ycc = _pad_replicate(ycc, 16 if sub420 else 8)

    planes = [ycc[0], ycc[1], ycc[2]]
    if sub420:
        for c in (1, 2):
            p = planes[c]
            lead = p.shape[:-2]
            p = p.reshape(*lead, p.shape[-2] // 2, 2, p.shape[-1] // 2, 2)
            planes[c] = p.mean(dim=(-3, -1))

    out_planes = []
    for c, plane in enumerate(planes):
        base = tabs.luma if c == 0 else tabs.chroma
        qtable = torch.as_tensor(np.asarray(base, dtype=np.float64), dtype=dtype, device=device)
        blocks = _blockify(plane - 128.0)
        coeffs = dct @ blocks @ dct.T
        coeffs = round_ste(coeffs / qtable) * qtable
        pixels = dct.T @ coeffs @ dct + 128.0
        plane = _unblockify(pixels)
        if c > 0 and sub420:
            # mirror the decoder: crop to true chroma dims, then interpolate
            plane = plane[..., : (h + 1) // 2, : (w + 1) // 2]
            plane = _upsample_2x_triangular(plane)
        out_planes.append(plane[..., :h, :w])

    ycc = torch.stack(out_planes, dim=-1)
    rgb = (ycc - offset) @ to_rgb.T
    return torch.clamp(rgb, 0.0, 255.0) / 255.0
