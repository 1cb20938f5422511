"""Multiplane-image representation, alpha compositing, and plane merging.

An MPI is an ordered stack of fronto-parallel RGBA planes at fixed depths in
the source camera frame. Index 0 is the farthest plane; compositing runs
back to front with the over operator. The standard stack carries 32 planes;
128-plane stacks exist only as pre-merge inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import GeometryError, ManifestError, ShapeError

STANDARD_PLANES = 32
PREMERGE_PLANES = 128

# Inverse-depth plane spacing bounds (upstream MPI-producer convention).
DEFAULT_NEAR = 1.0
DEFAULT_FAR = 100.0


def default_depths(num_planes: int = STANDARD_PLANES, near: float = DEFAULT_NEAR,
                   far: float = DEFAULT_FAR) -> np.ndarray:
    """Plane depths linear in inverse depth, ordered far to near."""
    disparities = np.linspace(1.0 / far, 1.0 / near, num_planes)
    return 1.0 / disparities


@dataclass
class MpiStack:
    """Stack of RGBA planes (N, H, W, 4) in [0,1] with far-to-near depths."""

    planes: torch.Tensor
    depths: np.ndarray

    def __post_init__(self):
        self.planes = torch.as_tensor(self.planes)
        self.depths = np.asarray(self.depths, dtype=np.float64)
        if self.planes.ndim != 4 or self.planes.shape[-1] != 4:
            raise ShapeError(f"planes must be (N, H, W, 4), got {tuple(self.planes.shape)}")
        n = self.planes.shape[0]
        if n < 1:
            raise ShapeError("MPI stack needs at least one plane")
        if self.depths.shape != (n,):
            raise ShapeError(
                f"depths shape {self.depths.shape} does not match {n} planes"
            )
        if np.any(self.depths <= 0):
            raise ShapeError("plane depths must be positive")
        if np.any(np.diff(self.depths) >= 0):
            raise ShapeError("plane depths must strictly decrease (far to near)")
        lo = float(self.planes.detach().min())
        hi = float(self.planes.detach().max())
        if lo < 0.0 or hi > 1.0:
            raise ShapeError(f"plane values must lie in [0,1], got [{lo}, {hi}]")

    @property
    def num_planes(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def rgb(self) -> torch.Tensor:
        return self.planes[..., :3]

    @property
    def alpha(self) -> torch.Tensor:
        return self.planes[..., 3]

    def to(self, dtype: torch.dtype) -> "MpiStack":
        return MpiStack(self.planes.to(dtype), self.depths)

    def numpy(self) -> np.ndarray:
        return self.planes.detach().cpu().numpy()


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics; pixel (x, y) maps through K = [[fx,0,cx],[0,fy,cy],[0,0,1]]."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def centered(cls, width: int, height: int, focal: float | None = None) -> "CameraModel":
        """Principal point at the pixel-grid center, focal defaulting to the width."""
        f = float(focal if focal is not None else width)
        return cls(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)


@dataclass(frozen=True)
class RelativePose:
    """Rigid map from source-camera to target-camera coordinates: X_t = R X_s + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise GeometryError("pose needs a 3x3 rotation and a 3-vector translation")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-6:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise GeometryError("rotation determinant must be +1")

    @classmethod
    def identity(cls) -> "RelativePose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def is_identity(self) -> bool:
        return np.array_equal(self.rotation, np.eye(3)) and not self.translation.any()


@dataclass(frozen=True)
class PoseSamplerConfig:
    translation_range: float = 0.5
    rotation_range_deg: float = 8.0

    def __post_init__(self):
        if self.translation_range < 0 or self.rotation_range_deg < 0:
            raise GeometryError("pose sampling ranges must be non-negative")


def composite_planes(planes: torch.Tensor) -> torch.Tensor:
    """Over-composite (..., N, H, W, 4) planes back to front into (..., H, W, 3).

    Equivalent to iterating C <- c_i a_i + C (1 - a_i) from far to near;
    computed as sum_i c_i a_i T_i with transmittances T_i = prod_{j>i}(1-a_j)
    from one cumulative product.
    """
    if planes.shape[-1] != 4:
        raise ShapeError(f"expected RGBA planes, got shape {tuple(planes.shape)}")
    rgb = planes[..., :3]
    alpha = planes[..., 3:]
    survive = (1.0 - alpha).flip(-4)
    cumulative = torch.cumprod(survive, dim=-4)
    ones = torch.ones_like(cumulative.narrow(-4, 0, 1))
    transmit = torch.cat([ones, cumulative.narrow(-4, 0, planes.shape[-4] - 1)], dim=-4).flip(-4)
    return (rgb * alpha * transmit).sum(dim=-4)


def composite(mpi: MpiStack) -> torch.Tensor:
    """Render the stack at the source viewpoint: C = sum_i c_i a_i prod_{j>i}(1-a_j)."""
    return composite_planes(mpi.planes)


def merge_planes(mpi128: MpiStack) -> MpiStack:
    """Collapse a 128-plane stack to 32 by over-compositing groups of 4.

    Within each far-to-near group the premultiplied colors are accumulated
    with the over operator and renormalized to straight alpha; the merged
    depth is the group's geometric mean.
    """
    if mpi128.num_planes != PREMERGE_PLANES:
        raise ShapeError(f"expected {PREMERGE_PLANES} planes, got {mpi128.num_planes}")

    merged = []
    depths = []
    for g in range(STANDARD_PLANES):
        group = mpi128.planes[4 * g : 4 * g + 4]
        premult = torch.zeros_like(group[0, ..., :3])
        transmit = torch.ones_like(group[0, ..., 3:])
        for k in range(4):
            alpha = group[k, ..., 3:]
            premult = group[k, ..., :3] * alpha + premult * (1.0 - alpha)
            transmit = transmit * (1.0 - alpha)
        alpha = 1.0 - transmit
        color = torch.where(alpha > 0, premult / alpha.clamp_min(1e-12), torch.zeros_like(premult))
        merged.append(torch.cat([color, alpha], dim=-1))
        depths.append(math.exp(np.log(mpi128.depths[4 * g : 4 * g + 4]).mean()))
    return MpiStack(torch.stack(merged), np.array(depths))


# ---------------------------------------------------------------------------
# Manifest I/O (the on-disk contract shared by the CLI and the viewer)

_MANIFEST_KEYS = ("width", "height", "num_planes", "depths", "intrinsics", "layers")


def save_manifest(mpi: MpiStack, cam: CameraModel, out_dir: str | Path,
                  manifest_name: str = "manifest.json") -> Path:
    """Write layer PNGs (straight alpha, 8-bit) plus the manifest JSON."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = []
    planes = np.clip(np.round(mpi.numpy() * 255.0), 0, 255).astype(np.uint8)
    for i in range(mpi.num_planes):
        name = f"layer_{i:02d}.png"
        Image.fromarray(planes[i], mode="RGBA").save(out_dir / name)
        layers.append(name)
    doc = {
        "width": mpi.width,
        "height": mpi.height,
        "num_planes": mpi.num_planes,
        "depths": [float(d) for d in mpi.depths],
        "intrinsics": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy},
        "layers": layers,
        "translation_units": "scene",
    }
    path = out_dir / manifest_name
    path.write_text(json.dumps(doc, indent=2))
    return path


def load_manifest(path: str | Path) -> tuple[MpiStack, CameraModel]:
    """Load and validate a manifest written by :func:`save_manifest`."""
    from PIL import Image

    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e
    missing = [k for k in _MANIFEST_KEYS if k not in doc]
    if missing:
        raise ManifestError(f"manifest missing keys: {missing}")

    width, height, num = doc["width"], doc["height"], doc["num_planes"]
    if len(doc["depths"]) != num:
        raise ManifestError(f"depths length {len(doc['depths'])} != num_planes {num}")
    if len(doc["layers"]) != num:
        raise ManifestError(f"layers length {len(doc['layers'])} != num_planes {num}")

    planes = np.empty((num, height, width, 4), dtype=np.float32)
    for i, name in enumerate(doc["layers"]):
        layer_path = path.parent / name
        if not layer_path.is_file():
            raise ManifestError(f"missing layer file: {layer_path}")
        img = Image.open(layer_path)
        if img.mode != "RGBA":
            raise ManifestError(f"layer {name} is {img.mode}, expected RGBA")
        arr = np.asarray(img)
        if arr.shape != (height, width, 4):
            raise ManifestError(
                f"layer {name} is {arr.shape[1]}x{arr.shape[0]}, expected {width}x{height}"
            )
        planes[i] = arr.astype(np.float32) / 255.0

    intr = doc["intrinsics"]
    cam = CameraModel(fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"])
    if not (0 <= cam.cx < width and 0 <= cam.cy < height):
        raise ManifestError("principal point lies outside the image")
    try:
        stack = MpiStack(torch.from_numpy(planes), np.asarray(doc["depths"]))
    except ShapeError as e:
        raise ManifestError(f"manifest stack invalid: {e}") from e
    return stack, cam
