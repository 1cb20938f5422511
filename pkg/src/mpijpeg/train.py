"""End-to-end joint training: embed -> quantize -> JPEG -> perturb -> restore.

One step alternates a discriminator update (reference vs detached embedding)
with a generator update through the full differentiable pipeline. Every
random draw flows from a single seeded generator so runs are bitwise
reproducible and resumable.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import generate_synthetic_scene, ingest_dataset, load_scene
from .errors import CheckpointError, MpiJpegError, ShapeError
from .jpeg import JpegConfig, jpeg_simulate, quantize_8bit
from .losses import (
    LossWeights,
    loss_adversarial_d,
    loss_adversarial_g,
    loss_freq,
    loss_perceptual,
    loss_reg,
    loss_render,
    loss_restore,
    loss_total_g,
)
from .mpi import CameraModel, MpiStack, PoseSamplerConfig, RelativePose, default_depths
from .nets import (
    DiscriminatorSpec,
    Embedder,
    EmbedderSpec,
    MultiScaleDiscriminator,
    PerceptualFeatures,
    Restorer,
    RestorerSpec,
    embed as embed_single,
    restore as restore_single,
)
from .perturb import PerturbConfig, color_jitter, random_crop, sample_color_params
from .render import sample_render_pose

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    width: int = 512
    height: int = 288
    batch_size: int = 2
    steps: int = 5000
    lr_g: float = 1e-4
    lr_embedder: float | None = None  # defaults to lr_g
    lr_d: float = 1e-4
    cosine_decay: bool = False  # anneal lr to 10% over cfg.steps
    seed: int = 0
    weights: LossWeights = LossWeights()
    adversarial_weight: float = 1.0
    perturb: PerturbConfig = PerturbConfig()
    perturb_prob: float = 0.5
    jpeg: JpegConfig = JpegConfig()
    jpeg_enabled: bool = True
    pose: PoseSamplerConfig = PoseSamplerConfig()
    # probability of supervising the render loss at the identity pose
    # (directly constrains compositing transmittance; speeds small-scale runs)
    identity_pose_prob: float = 0.0
    embedder: EmbedderSpec = EmbedderSpec()
    restorer: RestorerSpec = RestorerSpec()
    discriminator: DiscriminatorSpec = DiscriminatorSpec()
    dataset_root: str | None = None
    synthetic_scenes: int = 4
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.width % 8 or self.height % 8:
            raise ShapeError(f"resolution must be multiples of 8, got {self.width}x{self.height}")


def desk_config(**overrides) -> TrainConfig:
    """Small configuration that trains in minutes on one CPU core.

    Narrow networks, no GAN, and no perceptual terms; regularization,
    frequency, restoration, and render-MSE supervision stay on.
    """
    base = dict(
        width=128,
        height=72,
        batch_size=2,
        steps=2200,
        lr_g=3e-3,
        lr_embedder=1e-3,
        cosine_decay=True,
        seed=0,
        weights=LossWeights(reg=40.0, perceptual=0.0, restoration=5.0,
                            render=5.0, render_perceptual=0.0),
        adversarial_weight=0.0,
        identity_pose_prob=0.5,
        embedder=EmbedderSpec(branch_channels=(4, 8), trunk_channels=32),
        restorer=RestorerSpec(channels=32, head_channels=96),
        discriminator=DiscriminatorSpec(base_channels=32),
        checkpoint_every=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# Config (de)serialization

def config_to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["jpeg"]["chroma_subsampling"] = str(cfg.jpeg.chroma_subsampling.value)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d.get("weights", {}))
    d["perturb"] = PerturbConfig(**d.get("perturb", {}))
    d["jpeg"] = JpegConfig(**d.get("jpeg", {}))
    d["pose"] = PoseSamplerConfig(**d.get("pose", {}))
    emb = dict(d.get("embedder", {}))
    if "branch_channels" in emb:
        emb["branch_channels"] = tuple(emb["branch_channels"])
    d["embedder"] = EmbedderSpec(**emb)
    d["restorer"] = RestorerSpec(**d.get("restorer", {}))
    d["discriminator"] = DiscriminatorSpec(**d.get("discriminator", {}))
    return TrainConfig(**d)


# ---------------------------------------------------------------------------
# State

@dataclass
class TrainState:
    config: TrainConfig
    embedder: Embedder
    restorer: Restorer
    discriminator: MultiScaleDiscriminator
    features: PerceptualFeatures | None
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    depths: np.ndarray = None  # canonical plane depths, set from the scenes

    def __post_init__(self):
        if self.depths is None:
            self.depths = default_depths(self.config.restorer.planes)

    def model(self) -> "EmbedRestoreModel":
        return EmbedRestoreModel(self.embedder, self.restorer)


class EmbedRestoreModel:
    """Inference-facing pair of networks, channel-last single-image interface."""

    def __init__(self, embedder: Embedder | None = None, restorer: Restorer | None = None):
        self.embedder = embedder
        self.restorer = restorer

    def embed_image(self, mpi: MpiStack, ref: torch.Tensor) -> torch.Tensor:
        if self.embedder is None:
            raise MpiJpegError("no embedder loaded")
        return embed_single(self.embedder, mpi, ref)

    def restore_stack(self, image: torch.Tensor, depths) -> MpiStack:
        if self.restorer is None:
            raise MpiJpegError("no restorer loaded")
        return restore_single(self.restorer, image, depths)


def _needs_features(cfg: TrainConfig) -> bool:
    w = cfg.weights
    return w.perceptual > 0 or (w.render > 0 and w.render_perceptual > 0)


def init_train_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    embedder = Embedder(cfg.embedder)
    restorer = Restorer(cfg.restorer)
    discriminator = MultiScaleDiscriminator(cfg.discriminator)
    features = PerceptualFeatures() if _needs_features(cfg) else None
    lr_e = cfg.lr_embedder if cfg.lr_embedder is not None else cfg.lr_g
    opt_g = torch.optim.Adam(
        [
            {"params": list(embedder.parameters()), "lr": lr_e, "base_lr": lr_e},
            {"params": list(restorer.parameters()), "lr": cfg.lr_g, "base_lr": cfg.lr_g},
        ]
    )
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr_d)
    rng = np.random.default_rng(cfg.seed)
    return TrainState(cfg, embedder, restorer, discriminator, features, opt_g, opt_d, rng)


def _apply_lr_schedule(state: TrainState) -> None:
    """Cosine anneal from base_lr to 10% of it across cfg.steps."""
    cfg = state.config
    progress = min(state.step / max(cfg.steps, 1), 1.0)
    factor = 0.1 + 0.9 * 0.5 * (1.0 + np.cos(np.pi * progress))
    for group in state.opt_g.param_groups:
        group["lr"] = group["base_lr"] * factor


# ---------------------------------------------------------------------------
# One optimization step

def train_step(state: TrainState, batch: dict) -> dict:
    """One alternating D/G update; returns every loss term as a float."""
    cfg = state.config
    w = cfg.weights
    planes_cl: torch.Tensor = batch["planes"]
    ref_cl: torch.Tensor = batch["ref"]
    depths: np.ndarray = batch["depths"]
    cam: CameraModel = batch["cam"]

    planes_nchw = planes_cl.permute(0, 1, 4, 2, 3)
    ref_nchw = ref_cl.permute(0, 3, 1, 2)

    if cfg.cosine_decay:
        _apply_lr_schedule(state)
    embedding = state.embedder(planes_nchw, ref_nchw)
    e_q = quantize_8bit(embedding.permute(0, 2, 3, 1))

    record = {"step": state.step}
    if cfg.adversarial_weight > 0:
        d_real = state.discriminator(ref_nchw)
        d_fake = state.discriminator(e_q.detach().permute(0, 3, 1, 2))
        d_loss = loss_adversarial_d(d_real, d_fake)
        state.opt_d.zero_grad()
        d_loss.backward()
        state.opt_d.step()
        record["d_loss"] = d_loss.item()
    else:
        record["d_loss"] = 0.0

    # transmission chain: JPEG, then user edits (color, crop)
    x = jpeg_simulate(e_q, cfg.jpeg) if cfg.jpeg_enabled else e_q
    params = sample_color_params(cfg.perturb, state.rng, prob=cfg.perturb_prob)
    x = color_jitter(x, params)
    h, w_img = x.shape[-3], x.shape[-2]
    rect = (0, 0, w_img, h)
    if cfg.perturb.crop_enabled and state.rng.random() < cfg.perturb_prob:
        x, rect = random_crop(x, cfg.perturb, state.rng)
    x0, y0, cw, ch = rect

    restored = state.restorer(x.permute(0, 3, 1, 2)).permute(0, 1, 3, 4, 2)
    truth = planes_cl[:, :, y0 : y0 + ch, x0 : x0 + cw, :]

    pose = sample_render_pose(cfg.pose, state.rng)
    if cfg.identity_pose_prob > 0 and state.rng.random() < cfg.identity_pose_prob:
        pose = RelativePose.identity()
    zero = embedding.new_zeros(())
    l_reg = loss_reg(e_q, ref_cl)
    l_freq = loss_freq(e_q, ref_cl)
    l_perc = (
        loss_perceptual(e_q, ref_cl, state.features) if w.perceptual > 0 else zero
    )
    l_res = loss_restore(restored, truth, rgb_weight=w.restore_rgb)
    if w.render > 0:
        crop_cam = CameraModel(cam.fx, cam.fy, cam.cx - x0, cam.cy - y0)
        l_ren = loss_render(
            restored, truth, depths, pose, crop_cam,
            mse_weight=w.render_mse, perceptual_weight=w.render_perceptual,
            features=state.features,
        )
    else:
        l_ren = zero
    adv_g = (
        cfg.adversarial_weight * loss_adversarial_g(state.discriminator(e_q.permute(0, 3, 1, 2)))
        if cfg.adversarial_weight > 0
        else zero
    )
    total = loss_total_g(l_reg, l_perc, l_freq, l_res, l_ren, w, adversarial=adv_g)

    record.update(
        reg=l_reg.item(), perceptual=l_perc.item(), frequency=l_freq.item(),
        restoration=l_res.item(), render=l_ren.item(), adv_g=adv_g.item(),
        total=total.item(),
    )
    if not np.isfinite(record["total"]):
        raise MpiJpegError(f"non-finite loss at step {state.step}: {record}")

    if total.requires_grad:
        state.opt_g.zero_grad()
        total.backward()
        state.opt_g.step()
    state.step += 1
    return record


# ---------------------------------------------------------------------------
# Scene plumbing and the outer loop

def build_scenes(cfg: TrainConfig) -> list[tuple[MpiStack, torch.Tensor, CameraModel]]:
    """Load dataset scenes, or fall back to seeded synthetic scenes."""
    if cfg.dataset_root:
        records = ingest_dataset(cfg.dataset_root)
        return [load_scene(r) for r in records]
    scenes = []
    for i in range(cfg.synthetic_scenes):
        mpi, ref = generate_synthetic_scene(
            seed=cfg.seed * 7919 + i, size=(cfg.width, cfg.height)
        )
        scenes.append((mpi, ref, CameraModel.centered(cfg.width, cfg.height)))
    return scenes


def sample_batch(state: TrainState,
                 scenes: list[tuple[MpiStack, torch.Tensor, CameraModel]]) -> dict:
    """Assemble a batch, patch-cropping scenes larger than the train resolution.

    One crop offset is shared across the batch so a single camera model
    covers every item.
    """
    cfg = state.config
    idx = state.rng.integers(0, len(scenes), size=cfg.batch_size)
    first_mpi, _, first_cam = scenes[int(idx[0])]
    cam = first_cam
    oy = ox = 0
    if first_mpi.height != cfg.height or first_mpi.width != cfg.width:
        if first_mpi.height < cfg.height or first_mpi.width < cfg.width:
            raise ShapeError(
                f"scene {first_mpi.width}x{first_mpi.height} smaller than train resolution"
            )
        oy = int(state.rng.integers(0, first_mpi.height - cfg.height + 1))
        ox = int(state.rng.integers(0, first_mpi.width - cfg.width + 1))
        cam = CameraModel(first_cam.fx, first_cam.fy, first_cam.cx - ox, first_cam.cy - oy)

    planes_list, ref_list = [], []
    for i in idx:
        mpi, ref, _ = scenes[int(i)]
        if (mpi.height, mpi.width) != (first_mpi.height, first_mpi.width):
            raise ShapeError("scenes in one dataset must share dimensions")
        planes_list.append(mpi.planes[:, oy : oy + cfg.height, ox : ox + cfg.width, :])
        ref_list.append(ref[oy : oy + cfg.height, ox : ox + cfg.width, :])
    return {
        "planes": torch.stack(planes_list),
        "ref": torch.stack(ref_list),
        "depths": first_mpi.depths,
        "cam": cam,
    }


def train(cfg: TrainConfig, out_dir: str | Path,
          scenes: list | None = None) -> TrainState:
    """Run the training loop, writing metrics.csv and periodic checkpoints."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = init_train_state(cfg)
    if scenes is None:
        scenes = build_scenes(cfg)
    state.depths = scenes[0][0].depths

    fields = ["step", "reg", "perceptual", "frequency", "restoration",
              "render", "adv_g", "d_loss", "total"]
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for _ in range(cfg.steps):
            batch = sample_batch(state, scenes)
            record = train_step(state, batch)
            writer.writerow({k: record[k] for k in fields})
            if state.step % 500 == 0 or state.step == cfg.steps:
                log.info("step %d: total %.4f reg %.5f restore %.5f render %.5f",
                         state.step, record["total"], record["reg"],
                         record["restoration"], record["render"])
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_{state.step:06d}.pt", state)
    save_checkpoint(out_dir / "checkpoint_final.pt", state)
    return state


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path: str | Path, state: TrainState) -> Path:
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config_to_dict(state.config),
        "step": state.step,
        "depths": [float(d) for d in state.depths],
        "embedder": state.embedder.state_dict(),
        "restorer": state.restorer.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "np_rng": state.rng.bit_generator.state,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def _load_payload(path: Path) -> dict:
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        return torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e


def load_checkpoint(path: str | Path) -> TrainState:
    payload = _load_payload(Path(path))
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} != {CHECKPOINT_VERSION}")
    state = init_train_state(config_from_dict(payload["config"]))
    try:
        state.embedder.load_state_dict(payload["embedder"])
        state.restorer.load_state_dict(payload["restorer"])
        state.discriminator.load_state_dict(payload["discriminator"])
        state.opt_g.load_state_dict(payload["opt_g"])
        state.opt_d.load_state_dict(payload["opt_d"])
    except (KeyError, RuntimeError) as e:
        raise CheckpointError(f"checkpoint does not match architecture: {e}") from e
    state.step = payload["step"]
    state.depths = np.asarray(payload["depths"], dtype=np.float64)
    torch.set_rng_state(payload["torch_rng"])
    state.rng = np.random.default_rng()
    state.rng.bit_generator.state = payload["np_rng"]
    return state


def export_decoder(path: str | Path, state: TrainState) -> Path:
    """Write a restorer-only checkpoint for deployment-style restoration."""
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "decoder",
        "restorer_spec": dataclasses.asdict(state.config.restorer),
        "depths": [float(d) for d in state.depths],
        "restorer": state.restorer.state_dict(),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_decoder(path: str | Path) -> tuple[Restorer, np.ndarray]:
    """Load either a decoder export or a full checkpoint; returns (restorer, depths)."""
    payload = _load_payload(Path(path))
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported decoder version {payload.get('format_version')}")
    if payload.get("kind") == "decoder":
        spec = RestorerSpec(**payload["restorer_spec"])
        restorer = Restorer(spec)
        restorer.load_state_dict(payload["restorer"])
    elif "restorer" in payload and "config" in payload:
        cfg = config_from_dict(payload["config"])
        restorer = Restorer(cfg.restorer)
        restorer.load_state_dict(payload["restorer"])
    else:
        raise CheckpointError(f"{path} holds neither a decoder export nor a full checkpoint")
    restorer.eval()
    return restorer, np.asarray(payload["depths"], dtype=np.float64)


def load_model(path: str | Path) -> EmbedRestoreModel:
    """Load a full checkpoint as an inference model (embedder + restorer)."""
    payload = _load_payload(Path(path))
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('format_version')}")
    if "config" not in payload or "embedder" not in payload:
        raise CheckpointError(f"{path} is not a full training checkpoint")
    cfg = config_from_dict(payload["config"])
    embedder = Embedder(cfg.embedder)
    restorer = Restorer(cfg.restorer)
    try:
        embedder.load_state_dict(payload["embedder"])
        restorer.load_state_dict(payload["restorer"])
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint does not match architecture: {e}") from e
    embedder.eval()
    restorer.eval()
    return EmbedRestoreModel(embedder, restorer)
