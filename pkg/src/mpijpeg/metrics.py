"""Image quality metrics and the per-scene evaluation protocol.

PSNR and SSIM operate on float images in [0,1]. Evaluation embeds a scene,
pushes the embedding through the configured JPEG path, restores the MPI,
and scores renders against ground truth over a fixed grid of poses.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .errors import ShapeError
from .jpeg import JpegConfig, jpeg_simulate, quantize_8bit, roundtrip
from .mpi import CameraModel, MpiStack, RelativePose
from .render import render_novel_view

PSNR_CAP_DB = 100.0

_LUMA = np.array([0.299, 0.587, 0.114])

# 11-tap Gaussian window, sigma 1.5 (the canonical SSIM configuration).
_SSIM_RADIUS = 5
_t = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
_SSIM_KERNEL = np.exp(-(_t**2) / (2 * 1.5**2))
_SSIM_KERNEL /= _SSIM_KERNEL.sum()


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB on [0,1] images, capped at 100."""
    a, b = _to_numpy(a), _to_numpy(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def ssim(a, b) -> float:
    """Structural similarity on the luma channel, Gaussian-windowed.

    Uses the standard 11x11 window (sigma 1.5), stability constants
    K1=0.01 / K2=0.03 at dynamic range 1, and averages the map over the
    interior (window-radius border excluded).
    """
    a, b = _to_numpy(a), _to_numpy(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a @ _LUMA
        b = b @ _LUMA
    if a.ndim != 2:
        raise ShapeError(f"expected 2-D or HxWx3 images, got {a.ndim} dims")
    if min(a.shape) < 2 * _SSIM_RADIUS + 1:
        raise ShapeError(f"images must be at least 11x11 for SSIM, got {a.shape}")

    def smooth(x):
        x = correlate1d(x, _SSIM_KERNEL, axis=0, mode="nearest")
        return correlate1d(x, _SSIM_KERNEL, axis=1, mode="nearest")

    c1 = 0.01**2
    c2 = 0.03**2
    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a**2
    var_b = smooth(b * b) - mu_b**2
    cov = smooth(a * b) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    r = _SSIM_RADIUS
    return float(score[r:-r, r:-r].mean())


def eval_poses(offset: float = 0.4) -> list[RelativePose]:
    """The fixed 3x3 grid of (x, y) translations used for render scoring."""
    poses = []
    for ty in (-offset, 0.0, offset):
        for tx in (-offset, 0.0, offset):
            poses.append(RelativePose(np.eye(3), np.array([tx, ty, 0.0])))
    return poses


def eval_scene(model, mpi: MpiStack, ref: torch.Tensor, cam: CameraModel,
               poses: list[RelativePose] | None = None,
               jpeg: JpegConfig | None = JpegConfig(),
               codec: str = "exact") -> dict[str, float]:
    """Score one scene: embedding fidelity and novel-view render fidelity.

    `model` provides embed_image(mpi, ref) -> (H, W, 3) and
    restore_stack(image, depths) -> MpiStack. The embedding is pushed
    through the bit-exact codec (codec="exact"), the differentiable
    simulation ("simulate"), or no compression (jpeg=None) before
    restoration. Render scores average over the pose grid.
    """
    if poses is None:
        poses = eval_poses()
    with torch.no_grad():
        embedding = model.embed_image(mpi, ref)
        embedding = quantize_8bit(embedding)
        if jpeg is not None:
            if codec == "exact":
                decoded = roundtrip(embedding.numpy(), jpeg)
                transmitted = torch.as_tensor(decoded, dtype=embedding.dtype)
            elif codec == "simulate":
                transmitted = jpeg_simulate(embedding, jpeg)
            else:
                raise ValueError(f"unknown codec mode {codec!r}")
        else:
            transmitted = embedding
        restored = model.restore_stack(transmitted, mpi.depths)

        embed_psnr = psnr(embedding, ref)
        embed_ssim = ssim(embedding, ref)
        render_psnrs = []
        render_ssims = []
        for pose in poses:
            ours = render_novel_view(restored, pose, cam)
            truth = render_novel_view(mpi, pose, cam)
            render_psnrs.append(psnr(ours, truth))
            render_ssims.append(ssim(ours, truth))
    return {
        "embed_psnr": float(embed_psnr),
        "embed_ssim": float(embed_ssim),
        "render_psnr": float(np.mean(render_psnrs)),
        "render_ssim": float(np.mean(render_ssims)),
    }
