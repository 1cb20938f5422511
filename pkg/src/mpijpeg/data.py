"""Dataset ingestion and a procedural scene generator for desk-scale runs.

A training scene is a directory holding an MPI manifest (plus layer PNGs)
and a reference image. The synthetic generator builds stacks of textured
rectangles at distinct depths with soft alpha edges; its reference image is
the stack's own composite, so restoration targets are exactly consistent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DatasetError, ManifestError
from .mpi import CameraModel, MpiStack, composite, default_depths, load_manifest

log = logging.getLogger(__name__)

REFERENCE_NAME = "ref.png"


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    manifest_path: Path
    reference_path: Path


def ingest_dataset(root: str | Path) -> list[SceneRecord]:
    """Scan scene directories under `root`, skipping invalid scenes with a warning."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    records = []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        manifest_path = scene_dir / "manifest.json"
        ref_path = scene_dir / REFERENCE_NAME
        try:
            record = _validate_scene(scene_dir.name, manifest_path, ref_path)
        except (ManifestError, OSError) as e:
            log.warning("skipping scene %s: %s", scene_dir.name, e)
            continue
        records.append(record)
    if not records:
        raise DatasetError(f"no usable scenes under {root}")
    return records


def _validate_scene(scene_id: str, manifest_path: Path, ref_path: Path) -> SceneRecord:
    from PIL import Image

    mpi, _cam = load_manifest(manifest_path)
    if not ref_path.is_file():
        raise ManifestError(f"missing reference image {ref_path}")
    with Image.open(ref_path) as img:
        if img.size != (mpi.width, mpi.height):
            raise ManifestError(
                f"reference is {img.size[0]}x{img.size[1]}, MPI is {mpi.width}x{mpi.height}"
            )
    return SceneRecord(scene_id, manifest_path, ref_path)


def load_scene(record: SceneRecord) -> tuple[MpiStack, torch.Tensor, CameraModel]:
    from PIL import Image

    mpi, cam = load_manifest(record.manifest_path)
    with Image.open(record.reference_path) as img:
        ref = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return mpi, torch.from_numpy(ref), cam


def _smooth_texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Low-frequency cosine mixture per channel, kept inside [0.05, 0.95]."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    tex = np.empty((height, width, 3))
    base = rng.uniform(0.25, 0.75, size=3)
    for c in range(3):
        value = np.full((height, width), base[c])
        for _ in range(3):
            fx, fy = rng.uniform(0.005, 0.06, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            value += rng.uniform(0.05, 0.18) * np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)
        tex[..., c] = value
    return np.clip(tex, 0.05, 0.95)


def _soft_rect_alpha(height: int, width: int, y0, y1, x0, x1, margin: float) -> np.ndarray:
    """Rectangle mask with linear alpha ramps of `margin` pixels at the edges."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    ry = np.clip((yy - y0) / margin, 0, 1) * np.clip((y1 - yy) / margin, 0, 1)
    rx = np.clip((xx - x0) / margin, 0, 1) * np.clip((x1 - xx) / margin, 0, 1)
    return ry * rx


def generate_synthetic_scene(seed: int, size: tuple[int, int] = (128, 72),
                             planes: int = 32,
                             rectangles: int = 8) -> tuple[MpiStack, torch.Tensor]:
    """Procedural MPI: textured background plus floating soft-edged rectangles.

    Deterministic per seed. Returns the stack and its reference image
    (exactly the composite of the stack).
    """
    width, height = size
    rng = np.random.default_rng(seed)
    depths = default_depths(planes)
    stack = np.zeros((planes, height, width, 4), dtype=np.float32)

    # opaque far plane so the composite covers the frame
    stack[0, ..., :3] = _smooth_texture(rng, height, width)
    stack[0, ..., 3] = 1.0

    indices = rng.choice(np.arange(1, planes), size=min(rectangles, planes - 1), replace=False)
    for idx in sorted(indices):
        rw = rng.uniform(0.2, 0.55) * width
        rh = rng.uniform(0.2, 0.55) * height
        cx = rng.uniform(0.15, 0.85) * width
        cy = rng.uniform(0.15, 0.85) * height
        margin = rng.uniform(2.0, 5.0)
        alpha = _soft_rect_alpha(
            height, width, cy - rh / 2, cy + rh / 2, cx - rw / 2, cx + rw / 2, margin
        )
        stack[idx, ..., :3] = _smooth_texture(rng, height, width)
        stack[idx, ..., 3] = alpha

    mpi = MpiStack(torch.from_numpy(stack), depths)
    ref = composite(mpi)
    return mpi, ref
