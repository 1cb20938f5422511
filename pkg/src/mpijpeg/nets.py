"""Trainable components: embedder, restorer, multi-scale patch discriminator,
and the frozen perceptual feature stack.

All convolutions avoid batch-dependent normalization so inference is
batch-size invariant and stride-1 paths stay shift-covariant away from
borders. Channel widths are configurable; defaults keep the full model in
the single-digit-megabyte range.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ShapeError
from .mpi import MpiStack, STANDARD_PLANES


@dataclass(frozen=True)
class EmbedderSpec:
    planes: int = STANDARD_PLANES
    branch_channels: tuple[int, int] = (16, 32)
    trunk_channels: int = 64
    residual_blocks: int = 4


@dataclass(frozen=True)
class RestorerSpec:
    planes: int = STANDARD_PLANES
    channels: int = 64
    residual_blocks: int = 8
    head_channels: int = 128


@dataclass(frozen=True)
class DiscriminatorSpec:
    base_channels: int = 64
    layers: int = 4
    scales: int = 2


class ResidualBlock(nn.Module):
    """conv-relu-conv with identity skip; the branch starts near zero so a
    fresh stack is close to the identity and trains stably without norms."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.ReLU(inplace=True)
        with torch.no_grad():
            self.conv2.weight *= 0.1
            self.conv2.bias.zero_()

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


def fuse_features(features: torch.Tensor, alphas: torch.Tensor) -> torch.Tensor:
    """Alpha-weighted sum of per-plane feature maps: sum_i a_i * s_i.

    features: (..., N, C, H, W) or a list of N maps; alphas: (..., N, H, W).
    The alpha map broadcasts across the feature channels.
    """
    if isinstance(features, (list, tuple)):
        features = torch.stack(list(features), dim=-4)
    if isinstance(alphas, (list, tuple)):
        alphas = torch.stack(list(alphas), dim=-3)
    if features.shape[-4] != alphas.shape[-3]:
        raise ShapeError(
            f"{features.shape[-4]} feature maps vs {alphas.shape[-3]} alpha maps"
        )
    if features.shape[-2:] != alphas.shape[-2:]:
        raise ShapeError(
            f"feature dims {tuple(features.shape[-2:])} != alpha dims {tuple(alphas.shape[-2:])}"
        )
    return (features * alphas.unsqueeze(-3)).sum(dim=-4)


class Embedder(nn.Module):
    """Fuses per-plane RGB features, alpha features, and reference features,
    then runs an encoder-decoder trunk to produce the 3-channel embedding.

    The per-plane RGB branches are independent (grouped convolutions, no
    weight sharing); plane alphas weight the branch outputs during fusion.
    """

    def __init__(self, spec: EmbedderSpec = EmbedderSpec()):
        super().__init__()
        self.spec = spec
        n = spec.planes
        c1, c2 = spec.branch_channels
        tc = spec.trunk_channels
        self.rgb_branches = nn.Sequential(
            nn.Conv2d(3 * n, c1 * n, 3, padding=1, groups=n),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1 * n, c2 * n, 3, padding=1, groups=n),
            nn.ReLU(inplace=True),
        )
        self.alpha_extractor = nn.Sequential(
            nn.Conv2d(n, c1, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.ref_extractor = nn.Sequential(
            nn.Conv2d(3, c1, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        fused = 3 * c2
        self.down1 = nn.Sequential(nn.Conv2d(fused, tc, 3, stride=2, padding=1), nn.ReLU(inplace=True))
        self.down2 = nn.Sequential(nn.Conv2d(tc, tc, 3, stride=2, padding=1), nn.ReLU(inplace=True))
        self.blocks = nn.Sequential(*[ResidualBlock(tc) for _ in range(spec.residual_blocks)])
        self.up1 = nn.Sequential(nn.Conv2d(tc, tc, 3, padding=1), nn.ReLU(inplace=True))
        self.skip1 = nn.Sequential(nn.Conv2d(2 * tc, tc, 3, padding=1), nn.ReLU(inplace=True))
        self.up2 = nn.Sequential(nn.Conv2d(tc, tc, 3, padding=1), nn.ReLU(inplace=True))
        self.skip0 = nn.Sequential(nn.Conv2d(tc + fused, tc, 3, padding=1), nn.ReLU(inplace=True))
        self.head = nn.Conv2d(tc, 3, 3, padding=1)

    def forward(self, planes: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
        """planes: (B, N, 4, H, W); ref: (B, 3, H, W) -> embedding (B, 3, H, W)."""
        b, n, c, h, w = planes.shape
        if n != self.spec.planes or c != 4:
            raise ShapeError(f"expected (B, {self.spec.planes}, 4, H, W), got {tuple(planes.shape)}")
        if h % 4 or w % 4:
            raise ShapeError(f"H and W must be multiples of 4, got {h}x{w}")
        if ref.shape[-2:] != (h, w):
            raise ShapeError("reference image dims must match the MPI")

        rgb = planes[:, :, :3].reshape(b, n * 3, h, w)
        alpha = planes[:, :, 3]
        s = self.rgb_branches(rgb).reshape(b, n, -1, h, w)
        s_rgb = fuse_features(s, alpha)
        s_alpha = self.alpha_extractor(alpha)
        s_ref = self.ref_extractor(ref)

        f0 = torch.cat([s_rgb, s_alpha, s_ref], dim=1)
        f1 = self.down1(f0)
        f2 = self.down2(f1)
        y = self.blocks(f2)
        y = self.up1(_upsample2(y))
        y = self.skip1(torch.cat([y, f1], dim=1))
        y = self.up2(_upsample2(y))
        y = self.skip0(torch.cat([y, f0], dim=1))
        return torch.sigmoid(self.head(y))


def _upsample2(x):
    return nn.functional.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class Restorer(nn.Module):
    """Fully convolutional decoder from an embedding image back to RGBA planes."""

    def __init__(self, spec: RestorerSpec = RestorerSpec()):
        super().__init__()
        self.spec = spec
        ch = spec.channels
        self.head = nn.Sequential(nn.Conv2d(3, ch, 3, padding=1), nn.ReLU(inplace=True))
        self.blocks = nn.Sequential(*[ResidualBlock(ch) for _ in range(spec.residual_blocks)])
        self.flat = nn.Sequential(nn.Conv2d(ch, spec.head_channels, 3, padding=1),
                                  nn.ReLU(inplace=True))
        self.out = nn.Conv2d(spec.head_channels, spec.planes * 4, 1)
        with torch.no_grad():
            # most planes are mostly transparent; start the alpha logits low
            self.out.bias[3::4] = -2.0

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """image: (B, 3, H, W) -> planes (B, N, 4, H, W) in [0,1]."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h % 8 or w % 8:
            raise ShapeError(f"H and W must be multiples of 8, got {h}x{w}")
        y = self.blocks(self.head(image))  # identity skips run the full stack
        out = torch.sigmoid(self.out(self.flat(y)))
        return out.reshape(out.shape[0], self.spec.planes, 4, h, w)


class PatchDiscriminator(nn.Module):
    """Stride-2 conv stack ending in a 1-channel per-patch logit map."""

    def __init__(self, base_channels: int = 64, layers: int = 4):
        super().__init__()
        seq = []
        in_ch = 3
        ch = base_channels
        for _ in range(layers):
            seq += [nn.Conv2d(in_ch, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            in_ch, ch = ch, min(ch * 2, 8 * base_channels)
        seq.append(nn.Conv2d(in_ch, 1, 3, padding=1))
        self.net = nn.Sequential(*seq)

    def forward(self, x):
        return self.net(x)


class MultiScaleDiscriminator(nn.Module):
    """Patch discriminators at full and successively halved resolutions."""

    def __init__(self, spec: DiscriminatorSpec = DiscriminatorSpec()):
        super().__init__()
        self.spec = spec
        self.heads = nn.ModuleList(
            [PatchDiscriminator(spec.base_channels, spec.layers) for _ in range(spec.scales)]
        )

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        if image.shape[-2] < 64 or image.shape[-1] < 64:
            raise ShapeError(f"discriminator input must be at least 64x64, got {tuple(image.shape[-2:])}")
        outputs = []
        x = image
        for head in self.heads:
            outputs.append(head(x))
            x = nn.functional.avg_pool2d(x, 2)
        return outputs


# VGG19 conv stages; the tap after the last ReLU of each stage feeds the
# perceptual loss, giving 4 maps at 1, 1/2, 1/4, 1/8 resolution.
_VGG19_STAGES = (
    (64, 64),
    (128, 128),
    (256, 256, 256, 256),
    (512, 512, 512, 512),
)
_VGG_MEAN = (0.485, 0.456, 0.406)
_VGG_STD = (0.229, 0.224, 0.225)


class PerceptualFeatures(nn.Module):
    """Frozen VGG19-style feature extractor.

    Weights default to a fixed seeded random init (a valid feature metric
    for tests and desk-scale training); a pretrained file can be loaded
    with :meth:`load_weights` without changing any shape.
    """

    def __init__(self, init_seed: int = 2024):
        super().__init__()
        stages = []
        in_ch = 3
        for widths in _VGG19_STAGES:
            convs = []
            for ch in widths:
                convs += [nn.Conv2d(in_ch, ch, 3, padding=1), nn.ReLU(inplace=True)]
                in_ch = ch
            stages.append(nn.Sequential(*convs))
        self.stages = nn.ModuleList(stages)
        self.pool = nn.MaxPool2d(2)
        with torch.random.fork_rng():
            torch.manual_seed(init_seed)
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                    nn.init.zeros_(m.bias)
        for p in self.parameters():
            p.requires_grad_(False)
        mean = torch.tensor(_VGG_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_VGG_STD).view(1, 3, 1, 1)
        self.register_buffer("mean", mean)
        self.register_buffer("std", std)

    def load_weights(self, path) -> None:
        state = torch.load(path, map_location="cpu", weights_only=True)
        self.load_state_dict(state)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        """image: (B, 3, H, W) in [0,1] -> 4 feature maps, halving per stage."""
        x = (image - self.mean.to(image.dtype)) / self.std.to(image.dtype)
        taps = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.pool(x)
            x = stage(x)
            taps.append(x)
        return taps


# ---------------------------------------------------------------------------
# Single-image conveniences over the channel-last layout used at the edges

def embed(embedder: Embedder, mpi: MpiStack, ref: torch.Tensor) -> torch.Tensor:
    """Run one MPI + reference (H, W, 3) through the embedder -> (H, W, 3)."""
    if ref.shape[:2] != (mpi.height, mpi.width):
        raise ShapeError(
            f"reference {tuple(ref.shape[:2])} does not match MPI {(mpi.height, mpi.width)}"
        )
    planes = mpi.planes.permute(0, 3, 1, 2).unsqueeze(0)
    ref_nchw = ref.permute(2, 0, 1).unsqueeze(0)
    out = embedder(planes.to(ref.dtype), ref_nchw)
    return out[0].permute(1, 2, 0)


def restore(restorer: Restorer, image: torch.Tensor, depths) -> MpiStack:
    """Decode an (H, W, 3) embedding image into an MpiStack with given depths."""
    out = restorer(image.permute(2, 0, 1).unsqueeze(0))
    planes = out[0].permute(0, 2, 3, 1)
    return MpiStack(planes, depths)
