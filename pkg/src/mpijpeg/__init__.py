"""mpijpeg: embed a 32-plane multiplane image in an ordinary JPEG,
restore it from the (possibly compressed, edited, cropped) file, and
render novel views from the restored stack.

Embedding capacity: 32 planes x 4 channels x 8 bits = 1024 bits per pixel
carried by a 3-channel JPEG.
"""

__version__ = "0.1.0"

from .mpi import (
    CameraModel,
    MpiStack,
    PoseSamplerConfig,
    RelativePose,
    composite,
    default_depths,
    load_manifest,
    merge_planes,
    save_manifest,
)
from .render import render_novel_view, sample_render_pose, warp_plane
from .jpeg import (
    ChromaSubsampling,
    JpegConfig,
    jpeg_decode,
    jpeg_encode,
    jpeg_simulate,
    quant_tables_for_quality,
    quantize_8bit,
)
from .perturb import ColorJitterParams, PerturbConfig, color_jitter, random_crop
from .losses import LossWeights
from .metrics import eval_scene, psnr, ssim
from .nets import Embedder, MultiScaleDiscriminator, PerceptualFeatures, Restorer, fuse_features
from .train import TrainConfig, desk_config, train

__all__ = [
    "CameraModel",
    "ChromaSubsampling",
    "ColorJitterParams",
    "Embedder",
    "JpegConfig",
    "LossWeights",
    "MpiStack",
    "MultiScaleDiscriminator",
    "PerceptualFeatures",
    "PerturbConfig",
    "PoseSamplerConfig",
    "RelativePose",
    "Restorer",
    "TrainConfig",
    "color_jitter",
    "composite",
    "default_depths",
    "desk_config",
    "eval_scene",
    "fuse_features",
    "jpeg_decode",
    "jpeg_encode",
    "jpeg_simulate",
    "load_manifest",
    "merge_planes",
    "psnr",
    "quant_tables_for_quality",
    "quantize_8bit",
    "random_crop",
    "render_novel_view",
    "sample_render_pose",
    "save_manifest",
    "ssim",
    "train",
    "warp_plane",
]
