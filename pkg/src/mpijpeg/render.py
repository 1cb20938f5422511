"""Novel-view rendering: per-plane homography warps plus back-to-front blending.

Each MPI plane is fronto-parallel at depth d in the source camera, so the
target view of that plane is a single 3x3 homography. Rendering warps every
plane into the target frame (bilinear, transparent outside the frustum) and
composites the results. Warping is differentiable with respect to the plane
content, which the render loss relies on.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .errors import GeometryError, ShapeError
from .mpi import CameraModel, MpiStack, PoseSamplerConfig, RelativePose, composite_planes

_PLANE_NORMAL = np.array([0.0, 0.0, 1.0])


def plane_homography(depth: float, pose: RelativePose, cam: CameraModel) -> np.ndarray:
    """Homography taking target pixels to source pixels for the plane z = depth."""
    if depth <= 0:
        raise GeometryError(f"plane depth must be positive, got {depth}")
    # Points on the plane satisfy n.X = depth, so X_t = (R + t n^T / d) X_s.
    fwd = pose.rotation + np.outer(pose.translation, _PLANE_NORMAL) / depth
    det = np.linalg.det(fwd)
    if abs(det) < 1e-12:
        raise GeometryError(f"plane at depth {depth} is degenerate under this pose")
    k = cam.matrix
    return k @ np.linalg.inv(fwd) @ np.linalg.inv(k)


def _source_grids(depths: np.ndarray, pose: RelativePose, cam: CameraModel,
                  height: int, width: int):
    """Source-pixel lookup grids for every plane: (N, H, W) sx, sy, valid."""
    mats = np.stack([plane_homography(float(d), pose, cam) for d in depths])
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    denom = mats[:, 2, 0, None, None] * xs + mats[:, 2, 1, None, None] * ys \
        + mats[:, 2, 2, None, None]
    valid = denom > 1e-9
    safe = np.where(valid, denom, 1.0)
    sx = (mats[:, 0, 0, None, None] * xs + mats[:, 0, 1, None, None] * ys
          + mats[:, 0, 2, None, None]) / safe
    sy = (mats[:, 1, 0, None, None] * xs + mats[:, 1, 1, None, None] * ys
          + mats[:, 1, 2, None, None]) / safe
    return sx, sy, valid


def warp_stack(planes: torch.Tensor, depths: np.ndarray, pose: RelativePose,
               cam: CameraModel) -> torch.Tensor:
    """Warp (N, H, W, C) planes, each by its own plane homography, in one gather.

    Bilinear sampling; out-of-frustum and behind-camera samples come back 0
    (transparent), never edge-clamped.
    """
    n, h, w, c = planes.shape
    if pose.is_identity:
        return planes
    sx_np, sy_np, valid_np = _source_grids(depths, pose, cam, h, w)
    device = planes.device
    sx = torch.from_numpy(sx_np).to(device)
    sy = torch.from_numpy(sy_np).to(device)
    valid = torch.from_numpy(valid_np).to(device)

    x0 = torch.floor(sx)
    y0 = torch.floor(sy)
    wx = (sx - x0).to(planes.dtype)
    wy = (sy - y0).to(planes.dtype)
    x0 = x0.long()
    y0 = y0.long()

    flat = planes.reshape(n * h * w, c)
    base = (torch.arange(n, device=device) * (h * w)).view(n, 1, 1)
    out = torch.zeros_like(planes)
    for dy, fy in ((0, 1.0 - wy), (1, wy)):
        for dx, fx in ((0, 1.0 - wx), (1, wx)):
            xs = x0 + dx
            ys = y0 + dy
            inside = valid & (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            idx = base + ys.clamp(0, h - 1) * w + xs.clamp(0, w - 1)
            vals = flat[idx.reshape(-1)].reshape(n, h, w, c)
            weight = (fy * fx) * inside.to(planes.dtype)
            out = out + vals * weight.unsqueeze(-1)
    return out


def warp_plane(plane: torch.Tensor, depth: float, pose: RelativePose,
               cam: CameraModel) -> torch.Tensor:
    """Warp one (H, W, C) plane into the target view (backward bilinear warp)."""
    if plane.ndim != 3:
        raise ShapeError(f"expected (H, W, C) plane, got {tuple(plane.shape)}")
    if pose.is_identity:
        return plane
    return warp_stack(plane.unsqueeze(0), np.array([depth]), pose, cam)[0]


def render_planes(planes: torch.Tensor, depths: np.ndarray, pose: RelativePose,
                  cam: CameraModel) -> torch.Tensor:
    """Warp a stack to the target pose and composite.

    Accepts (N, H, W, 4) -> (H, W, 3) or a batched (B, N, H, W, 4) ->
    (B, H, W, 3); batch items share the pose, so they warp as extra
    channels in one pass per plane.
    """
    if pose.is_identity:
        return composite_planes(planes)
    if planes.ndim == 5:
        b, n, h, w, c = planes.shape
        flat = planes.permute(1, 2, 3, 0, 4).reshape(n, h, w, b * c)
        warped = warp_stack(flat, depths, pose, cam)
        warped = warped.reshape(n, h, w, b, c).permute(3, 0, 1, 2, 4)
        return composite_planes(warped)
    return composite_planes(warp_stack(planes, depths, pose, cam))


def render_novel_view(mpi: MpiStack, pose: RelativePose, cam: CameraModel) -> torch.Tensor:
    """The render operation: reproject every plane, then blend back to front."""
    return render_planes(mpi.planes, mpi.depths, pose, cam)


def sample_render_pose(cfg: PoseSamplerConfig, rng: np.random.Generator) -> RelativePose:
    """Draw a random pose: uniform translation, uniform intrinsic-XYZ Euler angles."""
    translation = rng.uniform(-cfg.translation_range, cfg.translation_range, size=3)
    angles = rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg, size=3)
    rotation = Rotation.from_euler("XYZ", angles, degrees=True).as_matrix()
    return RelativePose(rotation=rotation, translation=translation)
