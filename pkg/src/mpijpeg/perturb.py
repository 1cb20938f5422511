"""Differentiable image manipulations applied between compression and restoration.

Color adjustments model the photo filters users apply before sharing;
cropping models the editing that happens after compression. The color ops
are pointwise and differentiable everywhere except at the final clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeError
from .jpeg.tables import RGB_TO_YCBCR, YCBCR_TO_RGB

MIN_CROP = 64
CROP_ALIGN = 8

# Rec.601 luma, consistent with the JPEG path.
_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class PerturbConfig:
    brightness_delta: float = 0.1
    contrast_range: float = 0.15
    saturation_range: float = 0.15
    hue_delta_deg: float = 10.0
    crop_fraction: float = 0.9
    brightness_enabled: bool = True
    contrast_enabled: bool = True
    saturation_enabled: bool = True
    hue_enabled: bool = True
    crop_enabled: bool = True

    def __post_init__(self):
        for name in ("brightness_delta", "contrast_range", "saturation_range", "hue_delta_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValueError("crop_fraction must be in (0, 1]")


@dataclass(frozen=True)
class ColorJitterParams:
    """One sampled draw: add `brightness`, scale contrast/saturation, rotate hue."""

    brightness: float = 0.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue_deg: float = 0.0

    @property
    def is_identity(self) -> bool:
        return (
            self.brightness == 0.0
            and self.contrast == 1.0
            and self.saturation == 1.0
            and self.hue_deg == 0.0
        )


def sample_color_params(cfg: PerturbConfig, rng: np.random.Generator,
                        prob: float = 1.0) -> ColorJitterParams:
    """Draw jitter parameters; each enabled component fires with `prob`."""

    def fire(enabled):
        return enabled and (prob >= 1.0 or rng.random() < prob)

    return ColorJitterParams(
        brightness=float(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta))
        if fire(cfg.brightness_enabled) else 0.0,
        contrast=float(1.0 + rng.uniform(-cfg.contrast_range, cfg.contrast_range))
        if fire(cfg.contrast_enabled) else 1.0,
        saturation=float(1.0 + rng.uniform(-cfg.saturation_range, cfg.saturation_range))
        if fire(cfg.saturation_enabled) else 1.0,
        hue_deg=float(rng.uniform(-cfg.hue_delta_deg, cfg.hue_delta_deg))
        if fire(cfg.hue_enabled) else 0.0,
    )


def color_jitter(image: torch.Tensor, params: ColorJitterParams) -> torch.Tensor:
    """Apply brightness, contrast, saturation, hue (fixed order), clamp to [0,1].

    Identity parameters return the input unchanged, bit for bit.
    """
    if image.shape[-1] != 3:
        raise ShapeError(f"expected channel-last RGB, got shape {tuple(image.shape)}")
    if params.is_identity:
        return image

    out = image
    if params.brightness != 0.0:
        out = out + params.brightness
    if params.contrast != 1.0:
        mean = out.mean(dim=(-3, -2, -1), keepdim=True)
        out = mean + (out - mean) * params.contrast
    if params.saturation != 1.0:
        weights = torch.tensor(_LUMA, dtype=out.dtype, device=out.device)
        luma = (out * weights).sum(dim=-1, keepdim=True)
        out = luma + (out - luma) * params.saturation
    if params.hue_deg != 0.0:
        to_ycc = torch.as_tensor(RGB_TO_YCBCR, dtype=out.dtype, device=out.device)
        to_rgb = torch.as_tensor(YCBCR_TO_RGB, dtype=out.dtype, device=out.device)
        ycc = out @ to_ycc.T
        theta = math.radians(params.hue_deg)
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        cb = ycc[..., 1] * cos_t - ycc[..., 2] * sin_t
        cr = ycc[..., 1] * sin_t + ycc[..., 2] * cos_t
        out = torch.stack([ycc[..., 0], cb, cr], dim=-1) @ to_rgb.T
    return out.clamp(0.0, 1.0)


def random_color_jitter(image: torch.Tensor, cfg: PerturbConfig,
                        rng: np.random.Generator, prob: float = 1.0) -> torch.Tensor:
    return color_jitter(image, sample_color_params(cfg, rng, prob=prob))


def crop_dims(size: int, fraction: float) -> tuple[int, int]:
    """Smallest and largest legal crop along one axis (multiples of 8, >= 64)."""
    lo = max(MIN_CROP, CROP_ALIGN * math.ceil(fraction * size / CROP_ALIGN))
    hi = CROP_ALIGN * (size // CROP_ALIGN)
    return lo, hi


def random_crop(image: torch.Tensor, cfg: PerturbConfig,
                rng: np.random.Generator) -> tuple[torch.Tensor, tuple[int, int, int, int]]:
    """Crop a random aligned sub-image; returns (crop, (x0, y0, width, height))."""
    h, w = image.shape[-3], image.shape[-2]
    lo_h, hi_h = crop_dims(h, cfg.crop_fraction)
    lo_w, hi_w = crop_dims(w, cfg.crop_fraction)
    if lo_h > hi_h or lo_w > hi_w:
        raise ShapeError(
            f"image {w}x{h} is too small to crop at fraction {cfg.crop_fraction} "
            f"(min crop {MIN_CROP}, align {CROP_ALIGN})"
        )
    ch = int(rng.integers(lo_h // CROP_ALIGN, hi_h // CROP_ALIGN + 1)) * CROP_ALIGN
    cw = int(rng.integers(lo_w // CROP_ALIGN, hi_w // CROP_ALIGN + 1)) * CROP_ALIGN
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    return image[..., y0 : y0 + ch, x0 : x0 + cw, :], (x0, y0, cw, ch)
