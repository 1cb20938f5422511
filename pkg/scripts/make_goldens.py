#!/usr/bin/env python3
"""Regenerate the frozen test vectors under tests/data/.

Run once and commit the outputs. JPEG byte streams come from Pillow (an
independent conformant encoder); the expected decodes are this package's
own decoder output, frozen only after the script verifies they sit within
tolerance of Pillow's decode of the same bytes. The render golden is
frozen after checking the renderer against a per-pixel projection oracle.
"""

import io
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from mpijpeg.data import generate_synthetic_scene
from mpijpeg.jpeg import ChromaSubsampling, JpegConfig, jpeg_decode, jpeg_encode
from mpijpeg.mpi import CameraModel, RelativePose, save_manifest
from mpijpeg.render import render_novel_view

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"

PIL_SUBSAMPLING = {ChromaSubsampling.YUV444: 0, ChromaSubsampling.YUV420: 2}
CROSS_DECODER_TOL = 3  # observed <= 2/255; IDCT latitude between decoders


def golden_image() -> np.ndarray:
    """Deterministic 16x16 test card: gradients plus saturated patches."""
    y, x = np.mgrid[0:16, 0:16].astype(np.float64)
    img = np.stack([x / 15.0, y / 15.0, ((x + y) % 4) / 5.0 + 0.2], axis=-1)
    img[2:6, 2:6] = [1.0, 0.1, 0.1]
    img[9:14, 8:13] = [0.1, 0.8, 0.2]
    return np.clip(img, 0.0, 1.0)


def make_jpeg_goldens():
    img = golden_image()
    np.save(DATA / "golden_16x16.npy", img)
    u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)

    for sub, tag in ((ChromaSubsampling.YUV444, "444"), (ChromaSubsampling.YUV420, "420")):
        buf = io.BytesIO()
        Image.fromarray(u8).save(buf, format="JPEG", quality=90,
                                 subsampling=PIL_SUBSAMPLING[sub])
        stream = buf.getvalue()
        (DATA / f"golden_16x16_q90_{tag}.jpg").write_bytes(stream)

        ours = np.round(jpeg_decode(stream) * 255.0).astype(np.uint8)
        pil = np.asarray(Image.open(io.BytesIO(stream)).convert("RGB"))
        gap = np.abs(ours.astype(int) - pil.astype(int)).max()
        assert gap <= CROSS_DECODER_TOL, f"{tag}: decoder disagrees with Pillow by {gap}"
        np.save(DATA / f"golden_16x16_q90_{tag}_decoded.npy", ours)

        cfg = JpegConfig(quality=90, chroma_subsampling=sub)
        our_stream = jpeg_encode(img, cfg)
        (DATA / f"golden_16x16_q90_{tag}_ours.jpg").write_bytes(our_stream)
        ours2 = np.round(jpeg_decode(our_stream) * 255.0).astype(np.uint8)
        pil2 = np.asarray(Image.open(io.BytesIO(our_stream)).convert("RGB"))
        gap2 = np.abs(ours2.astype(int) - pil2.astype(int)).max()
        assert gap2 <= CROSS_DECODER_TOL, f"{tag}: our stream decodes {gap2} off in Pillow"
        print(f"{tag}: pil-stream gap {gap}, our-stream gap {gap2}, {len(our_stream)} bytes")


def render_oracle(planes: np.ndarray, depths, pose: RelativePose, cam: CameraModel):
    """Scalar per-pixel warp-and-over reference, independent of the renderer."""
    n, h, w, _ = planes.shape
    k = cam.matrix
    k_inv = np.linalg.inv(k)
    out = np.zeros((h, w, 3))
    for i in range(n):
        fwd = pose.rotation + np.outer(pose.translation, [0, 0, 1]) / depths[i]
        hmat = k @ np.linalg.inv(fwd) @ k_inv
        for yy in range(h):
            for xx in range(w):
                sx, sy, sw = hmat @ np.array([xx, yy, 1.0])
                rgba = np.zeros(4)
                if sw > 1e-9:
                    sx, sy = sx / sw, sy / sw
                    x0, y0 = int(np.floor(sx)), int(np.floor(sy))
                    fx, fy = sx - x0, sy - y0
                    for dy, wy in ((0, 1 - fy), (1, fy)):
                        for dx, wx in ((0, 1 - fx), (1, fx)):
                            xi, yi = x0 + dx, y0 + dy
                            if 0 <= xi < w and 0 <= yi < h:
                                rgba += wy * wx * planes[i, yi, xi]
                out[yy, xx] = rgba[:3] * rgba[3] + out[yy, xx] * (1 - rgba[3])
    return out


def make_render_golden():
    mpi, _ref = generate_synthetic_scene(seed=7, size=(32, 24), planes=4, rectangles=3)
    cam = CameraModel.centered(32, 24)
    scene_dir = DATA / "golden_scene"
    save_manifest(mpi, cam, scene_dir)

    pose = RelativePose(np.eye(3), np.array([0.25, -0.15, 0.1]))
    rendered = render_novel_view(mpi, pose, cam).numpy()
    oracle = render_oracle(mpi.numpy().astype(np.float64), mpi.depths, pose, cam)
    gap = np.abs(rendered - oracle).max()
    assert gap < 1e-5, f"renderer disagrees with oracle by {gap}"
    np.save(DATA / "golden_render.npy", rendered)
    print(f"render golden: oracle gap {gap:.2e}")


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    make_jpeg_goldens()
    make_render_golden()
    print(f"goldens written to {DATA}")
