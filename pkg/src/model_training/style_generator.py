# src/model_training/style_generator.py
"""
Style-modulated U-Net generator: mask -> synthetic SEM image.

The encoder reads the mask (content); a mapping network turns latent noise z into a style
vector w; each decoder level is modulated by AdaIN with a per-level affine projection of w,
and the finest decoder levels receive per-pixel Gaussian noise scaled by learned factors.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exception import ParameterError, ShapeError
from src.logger import get_logger
from src.model_training.attention_unet import ConvBlock, init_weights

logger = get_logger(__name__)

MODEL_VERSION = "style-unet/1"
ADAIN_EPS = 1e-5


@dataclass
class GenConfig:
    depth: int = 4
    base_channels: int = 32
    latent_dim: int = 64
    style_dim: int = 64
    mapping_layers: int = 3
    noise_levels: int = 2
    input_size: Tuple[int, int] = (256, 256)
    # seed of the pinned noise source used when no generator is supplied
    noise_seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        if self.depth < 2:
            raise ParameterError(f"generator depth must be >= 2, got {self.depth}")
        if min(self.base_channels, self.latent_dim, self.style_dim, self.mapping_layers) < 1:
            raise ParameterError("generator channel/latent/style/mapping sizes must be >= 1")
        if not 0 <= self.noise_levels <= self.depth - 1:
            raise ParameterError(f"noise_levels must be in [0, {self.depth - 1}], got {self.noise_levels}")
        step = 2 ** self.depth
        if any(v <= 0 or v % step for v in self.input_size):
            raise ParameterError(f"input_size {self.input_size} must be positive multiples of 2**depth={step}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StyleVector:
    w: torch.Tensor                                   # (B, style_dim)
    affine: List[Tuple[torch.Tensor, torch.Tensor]]   # per decoder level (0 = finest): (scale, shift), each (B, C)


def adain(features: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor, eps: float = ADAIN_EPS) -> torch.Tensor:
    """scale * (F - mean(F)) / sqrt(var(F) + eps) + shift, per channel over the spatial dims.

    features: (C, H, W) or (B, C, H, W); scale/shift: (C,) or (B, C).
    """
    squeeze = features.dim() == 3
    feats = features.unsqueeze(0) if squeeze else features
    channels = feats.shape[1]
    if scale.shape[-1] != channels or shift.shape[-1] != channels:
        raise ShapeError(
            f"adain: features have {channels} channels but scale {tuple(scale.shape)} / shift {tuple(shift.shape)}"
        )
    mean = feats.mean(dim=(2, 3), keepdim=True)
    var = feats.var(dim=(2, 3), keepdim=True, unbiased=False)
    normalized = (feats - mean) / torch.sqrt(var + eps)
    out = scale.reshape(-1, channels, 1, 1) * normalized + shift.reshape(-1, channels, 1, 1)
    return out[0] if squeeze else out


def inject_noise(features: torch.Tensor, rng: Optional[torch.Generator], scale: torch.Tensor) -> torch.Tensor:
    """features + scale[c] * eps with eps ~ N(0, 1) drawn once per spatial position."""
    squeeze = features.dim() == 3
    feats = features.unsqueeze(0) if squeeze else features
    b, c, h, w = feats.shape
    noise = torch.randn((b, 1, h, w), generator=rng, dtype=feats.dtype, device="cpu").to(feats.device)
    out = feats + scale.reshape(1, -1, 1, 1) * noise
    return out[0] if squeeze else out


class MappingNetwork(nn.Module):
    def __init__(self, latent_dim: int, style_dim: int, num_layers: int):
        super().__init__()
        layers = []
        in_dim = latent_dim
        for _ in range(num_layers):
            layers += [nn.Linear(in_dim, style_dim), nn.LeakyReLU(0.2)]
            in_dim = style_dim
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


class StyleAffine(nn.Module):
    """w -> (scale, shift) for one decoder level; identity modulation at w = 0."""

    def __init__(self, style_dim: int, channels: int):
        super().__init__()
        self.fc = nn.Linear(style_dim, 2 * channels)
        self.channels = channels

    def reset_bias(self):
        with torch.no_grad():
            self.fc.bias[: self.channels].fill_(1.0)
            self.fc.bias[self.channels:].zero_()

    def forward(self, w):
        out = self.fc(w)
        return out[:, : self.channels], out[:, self.channels:]


class StyleDecoderBlock(nn.Module):
    """upsample -> conv -> (noise) -> LeakyReLU -> AdaIN, then fuse with the skip feature."""

    def __init__(self, in_ch: int, skip_ch: int, out_ch: int, with_noise: bool):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.fuse = nn.Conv2d(out_ch + skip_ch, out_ch, 3, padding=1)
        self.with_noise = with_noise
        self.noise_scale = nn.Parameter(torch.zeros(out_ch)) if with_noise else None

    def forward(self, x, skip, scale, shift, rng):
        h = self.conv(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))
        if self.with_noise:
            h = inject_noise(h, rng, self.noise_scale)
        h = adain(F.leaky_relu(h, 0.2), scale, shift)
        return F.leaky_relu(self.fuse(torch.cat([h, skip], dim=1)), 0.2)


class StyleUNetGenerator(nn.Module):
    def __init__(self, config: Optional[GenConfig] = None):
        super().__init__()
        self.config = config or GenConfig()
        self.version = MODEL_VERSION
        cfg = self.config
        self.encoders = nn.ModuleList()
        in_ch = 1
        for level in range(cfg.depth):
            self.encoders.append(ConvBlock(in_ch, cfg.channels(level)))
            in_ch = cfg.channels(level)
        self.pool = nn.MaxPool2d(2)
        self.mapping = MappingNetwork(cfg.latent_dim, cfg.style_dim, cfg.mapping_layers)
        self.affines = nn.ModuleList([StyleAffine(cfg.style_dim, cfg.channels(level)) for level in range(cfg.depth - 1)])
        self.decoders = nn.ModuleList([
            StyleDecoderBlock(cfg.channels(level + 1), cfg.channels(level), cfg.channels(level),
                              with_noise=level < cfg.noise_levels)
            for level in range(cfg.depth - 1)
        ])
        self.head = nn.Conv2d(cfg.channels(0), 1, 1)
        init_weights(self)
        for affine in self.affines:
            affine.reset_bias()

    def pinned_rng(self) -> torch.Generator:
        return torch.Generator().manual_seed(self.config.noise_seed)

    def style(self, z: torch.Tensor) -> StyleVector:
        w = self.mapping(z)
        return StyleVector(w=w, affine=[affine(w) for affine in self.affines])

    def forward(self, mask: torch.Tensor, z: torch.Tensor, rng: Optional[torch.Generator] = None) -> torch.Tensor:
        if rng is None:
            rng = self.pinned_rng()
        style = self.style(z)
        feats = []
        h = mask
        for level, enc in enumerate(self.encoders):
            if level > 0:
                h = self.pool(h)
            h = enc(h)
            feats.append(h)
        d = feats[-1]
        for level in reversed(range(self.config.depth - 1)):
            scale, shift = style.affine[level]
            d = self.decoders[level](d, feats[level], scale, shift, rng)
        return torch.sigmoid(self.head(d))


def sample_latent(n: int, gen: StyleUNetGenerator, rng: Optional[torch.Generator] = None) -> torch.Tensor:
    """Standard-normal latent codes z, shape (n, latent_dim)."""
    return torch.randn((n, gen.config.latent_dim), generator=rng)


def map_latent(z: torch.Tensor, gen: StyleUNetGenerator) -> StyleVector:
    batch = z.unsqueeze(0) if z.dim() == 1 else z
    if batch.shape[-1] != gen.config.latent_dim:
        raise ShapeError(f"latent z has dimension {batch.shape[-1]}, model expects {gen.config.latent_dim}")
    return gen.style(batch)


def generate_image(mask: torch.Tensor, z: torch.Tensor, gen: StyleUNetGenerator,
                   rng: Optional[torch.Generator] = None) -> torch.Tensor:
    """Synthetic image in [0, 1] with the mask's spatial shape.

    mask: (H, W), (1, H, W) or (B, 1, H, W); z: (latent_dim,) or (B, latent_dim).
    With rng=None the model's pinned noise source is used, so repeated calls match.
    """
    squeeze = mask.dim() < 4
    batch = mask.reshape(1, 1, *mask.shape[-2:]) if squeeze else mask
    if tuple(batch.shape[-2:]) != tuple(gen.config.input_size) or batch.shape[1] != 1:
        raise ShapeError(f"mask shape {tuple(mask.shape)} does not match generator input {gen.config.input_size}")
    zb = z.unsqueeze(0) if z.dim() == 1 else z
    if zb.shape[-1] != gen.config.latent_dim or zb.shape[0] != batch.shape[0]:
        raise ShapeError(f"latent batch {tuple(zb.shape)} does not match masks {tuple(batch.shape)}")
    out = gen(batch.float(), zb, rng)
    return out.reshape(mask.shape) if squeeze else out
