"""Command-line surface: embed, restore, render, export viewer assets,
train, evaluate, perturb, merge planes, JPEG round trips.

Exit codes: 0 success, 2 bad input (missing files, bad arguments),
3 validation failure (malformed manifests/streams/checkpoints), 4 runtime.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .errors import (
    CheckpointError,
    DatasetError,
    GeometryError,
    JpegParseError,
    ManifestError,
    MpiJpegError,
    ShapeError,
)
from .jpeg import ChromaSubsampling, JpegConfig, jpeg_decode, jpeg_encode, quantize_8bit
from .metrics import eval_poses, eval_scene, psnr
from .mpi import CameraModel, MpiStack, RelativePose, load_manifest, merge_planes, save_manifest
from .perturb import PerturbConfig, random_color_jitter, random_crop
from .render import render_novel_view
from .train import (
    EmbedRestoreModel,
    build_scenes,
    config_from_dict,
    desk_config,
    export_decoder,
    load_decoder,
    load_model,
    train,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

_VALIDATION_ERRORS = (
    ManifestError, ShapeError, GeometryError, JpegParseError, CheckpointError, DatasetError,
)

GOLDEN_POSES = [
    {"name": "golden_identity", "tx": 0.0, "ty": 0.0, "tz": 0.0, "rx": 0.0, "ry": 0.0, "rz": 0.0},
    {"name": "golden_shift", "tx": 0.3, "ty": -0.2, "tz": 0.1, "rx": 0.0, "ry": 0.0, "rz": 0.0},
    {"name": "golden_tilt", "tx": -0.25, "ty": 0.15, "tz": 0.0, "rx": 2.0, "ry": -3.0, "rz": 1.0},
]


def _load_image(path: Path) -> torch.Tensor:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)


def _save_image(path: Path, image) -> None:
    from PIL import Image

    arr = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    Image.fromarray(np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)).save(path)


def _pose_from_args(tx, ty, tz, rx, ry, rz) -> RelativePose:
    from scipy.spatial.transform import Rotation

    rotation = Rotation.from_euler("XYZ", [rx, ry, rz], degrees=True).as_matrix()
    return RelativePose(rotation=rotation, translation=np.array([tx, ty, tz]))


def _jpeg_cfg(args) -> JpegConfig:
    return JpegConfig(quality=args.quality, chroma_subsampling=ChromaSubsampling(args.subsampling))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands

def cmd_embed(args) -> int:
    mpi, _cam = load_manifest(_require(Path(args.mpi), "manifest"))
    ref = _load_image(_require(Path(args.ref), "reference image"))
    model = load_model(_require(Path(args.checkpoint), "checkpoint"))
    with torch.no_grad():
        embedding = quantize_8bit(model.embed_image(mpi, ref))
    data = jpeg_encode(embedding.numpy(), _jpeg_cfg(args))
    Path(args.out).write_bytes(data)
    print(f"wrote {args.out} ({len(data)} bytes, quality {args.quality})")
    return EXIT_OK


def cmd_restore(args) -> int:
    data = _require(Path(args.input), "JPEG file").read_bytes()
    image = torch.from_numpy(jpeg_decode(data).astype(np.float32))
    restorer, depths = load_decoder(_require(Path(args.decoder), "decoder checkpoint"))
    model = EmbedRestoreModel(restorer=restorer)
    with torch.no_grad():
        stack = model.restore_stack(image, depths)
    h, w = image.shape[:2]
    cam = CameraModel.centered(w, h, focal=args.focal)
    manifest = save_manifest(stack, cam, args.out_dir)
    print(f"restored {stack.num_planes} planes -> {manifest}")
    return EXIT_OK


def cmd_render(args) -> int:
    mpi, cam = load_manifest(_require(Path(args.manifest), "manifest"))
    pose = _pose_from_args(args.tx, args.ty, args.tz, args.rx, args.ry, args.rz)
    with torch.no_grad():
        view = render_novel_view(mpi, pose, cam)
    _save_image(Path(args.out), view)
    print(f"rendered {args.out}")
    return EXIT_OK


def cmd_export_viewer(args) -> int:
    mpi, cam = load_manifest(_require(Path(args.manifest), "manifest"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_manifest(mpi, cam, out_dir)

    goldens = []
    for spec in GOLDEN_POSES:
        pose = _pose_from_args(spec["tx"], spec["ty"], spec["tz"],
                               spec["rx"], spec["ry"], spec["rz"])
        with torch.no_grad():
            view = render_novel_view(mpi, pose, cam)
        name = f"{spec['name']}.png"
        _save_image(out_dir / name, view)
        goldens.append({**spec, "file": name})

    config = {
        "manifest": "manifest.json",
        "pose_ranges": {"translation": args.translation_range, "rotation_deg": args.rotation_range},
        "translation_units": "scene",
        "golden_views": goldens,
    }
    (out_dir / "viewer_config.json").write_text(json.dumps(config, indent=2))
    print(f"exported viewer bundle -> {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    import dataclasses

    if args.config:
        cfg = config_from_dict(json.loads(_require(Path(args.config), "config").read_text()))
    else:
        cfg = desk_config()
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    state = train(cfg, args.out_dir)
    final = Path(args.out_dir) / "checkpoint_final.pt"
    decoder = Path(args.out_dir) / "decoder.pt"
    export_decoder(decoder, state)
    print(f"trained {state.step} steps -> {final} (decoder: {decoder})")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(_require(Path(args.checkpoint), "checkpoint"))
    if args.dataset:
        from .data import ingest_dataset, load_scene

        scenes = [load_scene(r) for r in ingest_dataset(args.dataset)]
    else:
        cfg = desk_config(synthetic_scenes=args.synthetic)
        scenes = build_scenes(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jpeg = None if args.codec == "none" else _jpeg_cfg(args)
    codec = args.codec if args.codec != "none" else "exact"
    rows = []
    for i, (mpi, ref, cam) in enumerate(scenes):
        scores = eval_scene(model, mpi, ref, cam, poses=eval_poses(), jpeg=jpeg, codec=codec)
        rows.append({"scene": f"scene_{i:03d}", **scores})
    with open(out_dir / "eval.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    summary = {
        key: float(np.mean([r[key] for r in rows]))
        for key in ("embed_psnr", "embed_ssim", "render_psnr", "render_ssim")
    }
    summary["scenes"] = len(rows)
    summary["codec"] = args.codec
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_perturb(args) -> int:
    image = _load_image(_require(Path(args.input), "image"))
    rng = np.random.default_rng(args.seed)
    cfg = PerturbConfig(crop_fraction=args.crop_fraction)
    out = random_color_jitter(image, cfg, rng)
    if args.crop:
        out, rect = random_crop(out, cfg, rng)
        print(f"crop rect (x0, y0, w, h): {rect}")
    _save_image(Path(args.out), out)
    print(f"perturbed {args.input} -> {args.out}")
    return EXIT_OK


def cmd_merge_planes(args) -> int:
    mpi, cam = load_manifest(_require(Path(args.manifest), "manifest"))
    merged = merge_planes(mpi)
    manifest = save_manifest(merged, cam, args.out_dir)
    print(f"merged {mpi.num_planes} -> {merged.num_planes} planes: {manifest}")
    return EXIT_OK


def cmd_jpeg_roundtrip(args) -> int:
    image = _load_image(_require(Path(args.input), "image")).numpy().astype(np.float64)
    cfg = _jpeg_cfg(args)
    data = jpeg_encode(image, cfg)
    Path(args.out).write_bytes(data)
    decoded = jpeg_decode(data)
    if args.decoded:
        _save_image(Path(args.decoded), decoded)
    print(f"encoded {args.input} -> {args.out} ({len(data)} bytes), "
          f"roundtrip PSNR {psnr(decoded, image):.2f} dB")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpijpeg",
        description="Embed multiplane images in ordinary JPEGs, restore them, render novel views.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_jpeg_opts(p):
        p.add_argument("--quality", type=int, default=90)
        p.add_argument("--subsampling", choices=["4:4:4", "4:2:0"], default="4:2:0")

    p = sub.add_parser("embed", help="embed an MPI into a JPEG file")
    p.add_argument("--mpi", required=True, help="MPI manifest JSON")
    p.add_argument("--ref", required=True, help="reference image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output .jpg path")
    add_jpeg_opts(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("restore", help="restore an MPI from an embedding JPEG")
    p.add_argument("--in", dest="input", required=True, help="embedding JPEG")
    p.add_argument("--decoder", required=True, help="decoder (or full) checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--focal", type=float, default=None,
                   help="focal length for the output manifest (default: image width)")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("render", help="render a novel view from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .png path")
    for axis in ("tx", "ty", "tz"):
        p.add_argument(f"--{axis}", type=float, default=0.0)
    for axis in ("rx", "ry", "rz"):
        p.add_argument(f"--{axis}", type=float, default=0.0, help=f"{axis} rotation, degrees")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("export-viewer", help="write a static bundle for the browser viewer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--translation-range", type=float, default=0.5)
    p.add_argument("--rotation-range", type=float, default=8.0)
    p.set_defaults(func=cmd_export_viewer)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", help="JSON training config (default: desk-scale preset)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=None, help="override config step count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over scenes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="dataset root (default: synthetic scenes)")
    p.add_argument("--synthetic", type=int, default=4, help="synthetic scene count")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--codec", choices=["exact", "simulate", "none"], default="exact")
    add_jpeg_opts(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb", help="apply random color jitter / crop to an image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crop", action="store_true", help="also crop randomly")
    p.add_argument("--crop-fraction", type=float, default=0.9)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("merge-planes", help="merge a 128-plane manifest down to 32")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_merge_planes)

    p = sub.add_parser("jpeg-roundtrip", help="encode/decode an image with the bit-exact codec")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output .jpg path")
    p.add_argument("--decoded", help="optionally write the decoded .png")
    add_jpeg_opts(p)
    p.set_defaults(func=cmd_jpeg_roundtrip)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except MpiJpegError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"unexpected error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
