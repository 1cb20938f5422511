"""Training objectives.

All distances are mean-reduced per element so the weights below are
resolution-independent. The frequency loss uses an orthonormal 2-D DFT,
which makes it exactly equal to the pixel MSE by Parseval's theorem; it
differs only once masking or reweighting in the frequency domain is added,
but is kept as a separate term to mirror the training objective structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeError
from .mpi import CameraModel, RelativePose
from .render import render_planes


@dataclass(frozen=True)
class LossWeights:
    """Weights of the generator objective and its render/restore sub-terms."""

    reg: float = 8.0
    perceptual: float = 6.0
    frequency: float = 0.003
    restoration: float = 30.0
    render: float = 1.0
    restore_rgb: float = 10.0
    render_mse: float = 100.0
    render_perceptual: float = 15.0

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_reg(embedding: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Mean squared pixel error between embedding and reference."""
    _check_same_shape(embedding, ref)
    return (embedding - ref).square().mean()


def loss_freq(embedding: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Mean squared complex-spectrum error, orthonormal 2-D DFT per channel.

    Inputs are channel-last (..., H, W, C); the transform runs over H and W.
    """
    _check_same_shape(embedding, ref)
    diff = torch.fft.fft2(embedding - ref, dim=(-3, -2), norm="ortho")
    return (diff.real.square() + diff.imag.square()).mean()


def loss_perceptual(a: torch.Tensor, b: torch.Tensor, features) -> torch.Tensor:
    """Sum over feature stages of the mean absolute feature difference.

    `features` maps a (B, 3, H, W) batch to a list of maps; each stage term
    is normalized by its element count, so stages contribute at comparable
    scale regardless of resolution.
    """
    _check_same_shape(a, b)
    if a.ndim == 3:
        a = a.unsqueeze(0)
        b = b.unsqueeze(0)
    fa = features(a.permute(0, 3, 1, 2))
    fb = features(b.permute(0, 3, 1, 2))
    total = a.new_zeros(())
    for ma, mb in zip(fa, fb):
        total = total + (ma - mb).abs().mean()
    return total


def loss_restore(restored: torch.Tensor, truth: torch.Tensor,
                 rgb_weight: float = 10.0) -> torch.Tensor:
    """Per-plane restoration error, summed over planes.

    The color term is masked by the ground-truth alpha, so color is only
    supervised where the plane is actually visible; the alpha term is plain
    MSE. Both are mean-reduced within each plane.
    """
    _check_same_shape(restored, truth)
    if restored.shape[-1] != 4:
        raise ShapeError("restoration loss expects RGBA planes (..., N, H, W, 4)")
    truth_alpha = truth[..., 3:]
    color_err = (restored[..., :3] * truth_alpha - truth[..., :3] * truth_alpha).square()
    alpha_err = (restored[..., 3:] - truth[..., 3:]).square()
    per_plane = rgb_weight * color_err.mean(dim=(-3, -2, -1)) + alpha_err.mean(dim=(-3, -2, -1))
    return per_plane.sum(dim=-1).mean()


def loss_render(restored_planes: torch.Tensor, truth_planes: torch.Tensor,
                depths: np.ndarray, pose: RelativePose, cam: CameraModel,
                mse_weight: float = 100.0, perceptual_weight: float = 15.0,
                features=None) -> torch.Tensor:
    """Render both stacks at one pose; weighted MSE plus perceptual distance."""
    _check_same_shape(restored_planes, truth_planes)
    rendered = render_planes(restored_planes, depths, pose, cam)
    target = render_planes(truth_planes, depths, pose, cam)
    total = mse_weight * (rendered - target).square().mean()
    if perceptual_weight > 0 and features is not None:
        total = total + perceptual_weight * loss_perceptual(rendered, target, features)
    return total


def loss_adversarial_d(real_logits: list[torch.Tensor],
                       fake_logits: list[torch.Tensor]) -> torch.Tensor:
    """Discriminator objective (to minimize): per-patch BCE, real=1, fake=0.

    Equals the negation of log D(real) + log(1 - D(fake)) averaged over
    patches and scales; 0 at the discriminator optimum, 2 log 2 at chance.
    """
    total = real_logits[0].new_zeros(())
    for real, fake in zip(real_logits, fake_logits):
        total = total + F.softplus(-real).mean() + F.softplus(fake).mean()
    return total / len(real_logits)


def loss_adversarial_g(fake_logits: list[torch.Tensor]) -> torch.Tensor:
    """Non-saturating generator term: -log D(fake), averaged over patches/scales."""
    total = fake_logits[0].new_zeros(())
    for fake in fake_logits:
        total = total + F.softplus(-fake).mean()
    return total / len(fake_logits)


def loss_total_g(reg: torch.Tensor, perceptual: torch.Tensor, freq: torch.Tensor,
                 restoration: torch.Tensor, render: torch.Tensor,
                 weights: LossWeights,
                 adversarial: torch.Tensor | float = 0.0) -> torch.Tensor:
    """Weighted generator objective; the adversarial term enters unweighted."""
    return (
        weights.reg * reg
        + weights.perceptual * perceptual
        + weights.frequency * freq
        + weights.restoration * restoration
        + weights.render * render
        + adversarial
    )
