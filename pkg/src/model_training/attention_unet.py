# src/model_training/attention_unet.py
"""
Attention-gated U-Net segmenter.

The encoder halves the resolution depth-1 times; every skip connection passes through an
additive attention gate conditioned on the decoder feature one level coarser:

    f     = ReLU(W_x x + up(W_g g))
    alpha = sigmoid(psi^T f + b_psi)
    x_hat = alpha * x

Gate index 0 is the finest skip connection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exception import CheckpointError, ParameterError, ShapeError
from src.logger import get_logger
from src.utils import load_arrays_into, load_checkpoint, module_to_arrays, save_checkpoint

logger = get_logger(__name__)

MODEL_VERSION = "attention-unet/1"


@dataclass
class UNetConfig:
    depth: int = 4
    base_channels: int = 32
    f_int_ratio: float = 0.5
    input_size: Tuple[int, int] = (256, 256)
    in_channels: int = 1

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        if self.depth < 2:
            raise ParameterError(f"depth must be >= 2, got {self.depth}")
        if self.base_channels < 1:
            raise ParameterError(f"base_channels must be >= 1, got {self.base_channels}")
        if not 0 < self.f_int_ratio <= 1:
            raise ParameterError(f"f_int_ratio must be in (0, 1], got {self.f_int_ratio}")
        step = 2 ** self.depth
        if any(v <= 0 or v % step for v in self.input_size):
            raise ParameterError(f"input_size {self.input_size} must be positive multiples of 2**depth={step}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def f_int(self, level: int) -> int:
        return max(1, int(self.channels(level) * self.f_int_ratio))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttentionGateParams:
    """Gate weights as plain tensors.

    W_x: (F_int, F_l), W_g: (F_int, F_g), psi: (F_int,), b_psi: scalar tensor.
    """
    W_x: torch.Tensor
    W_g: torch.Tensor
    psi: torch.Tensor
    b_psi: torch.Tensor

    @property
    def f_l(self) -> int:
        return self.W_x.shape[1]

    @property
    def f_g(self) -> int:
        return self.W_g.shape[1]

    @property
    def f_int(self) -> int:
        return self.W_x.shape[0]


@dataclass
class AttentionMap:
    alpha: torch.Tensor  # (B, 1, H, W)
    gate_index: int

    def as_array(self, sample: int = 0) -> np.ndarray:
        return self.alpha[sample, 0].detach().cpu().numpy()

    @property
    def resolution(self) -> Tuple[int, int]:
        return tuple(self.alpha.shape[-2:])


def attention_gate(x: torch.Tensor, g: torch.Tensor, params: AttentionGateParams):
    """Apply one additive attention gate.

    x: (B, F_l, H, W) encoder features; g: (B, F_g, H', W') gating features with H, W
    integer multiples of H', W'. Returns (x_hat, AttentionMap) with gate_index -1; the
    network stamps the real index.
    """
    if x.dim() != 4 or g.dim() != 4:
        raise ShapeError(f"attention_gate expects 4-D tensors, got x {tuple(x.shape)} and g {tuple(g.shape)}")
    if x.shape[1] != params.f_l or g.shape[1] != params.f_g or params.W_g.shape[0] != params.f_int \
            or params.psi.numel() != params.f_int:
        raise ShapeError(
            f"gate channels do not match: x {tuple(x.shape)}, g {tuple(g.shape)}, "
            f"W_x {tuple(params.W_x.shape)}, W_g {tuple(params.W_g.shape)}, psi {tuple(params.psi.shape)}"
        )
    (h, w), (hg, wg) = x.shape[-2:], g.shape[-2:]
    if hg > h or wg > w or h % hg or w % wg:
        raise ShapeError(f"gating signal {tuple(g.shape)} cannot be upsampled onto encoder features {tuple(x.shape)}")

    theta_x = torch.einsum("oc,bchw->bohw", params.W_x, x)
    phi_g = torch.einsum("oc,bchw->bohw", params.W_g, g)
    if (hg, wg) != (h, w):
        phi_g = F.interpolate(phi_g, size=(h, w), mode="bilinear", align_corners=False)
    f = F.relu(theta_x + phi_g)
    alpha = torch.sigmoid(torch.einsum("c,bchw->bhw", params.psi, f).unsqueeze(1) + params.b_psi)
    return alpha * x, AttentionMap(alpha=alpha, gate_index=-1)


class AttentionGate(nn.Module):
    def __init__(self, f_l: int, f_g: int, f_int: int):
        super().__init__()
        self.W_x = nn.Parameter(torch.empty(f_int, f_l))
        self.W_g = nn.Parameter(torch.empty(f_int, f_g))
        self.psi = nn.Parameter(torch.empty(f_int))
        self.b_psi = nn.Parameter(torch.zeros(()))
        for weight, fan_in in ((self.W_x, f_l), (self.W_g, f_g), (self.psi, f_int)):
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(weight, -bound, bound)

    @property
    def params(self) -> AttentionGateParams:
        return AttentionGateParams(W_x=self.W_x, W_g=self.W_g, psi=self.psi, b_psi=self.b_psi)

    def forward(self, x: torch.Tensor, g: torch.Tensor):
        return attention_gate(x, g, self.params)


class ConvBlock(nn.Module):
    """(conv3x3 -> BN -> ReLU) x 2"""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class UpConv(nn.Module):
    """Bilinear x2 upsampling followed by conv3x3 -> BN -> ReLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))


def init_weights(module: nn.Module) -> None:
    """Fan-in scaled uniform weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5))
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class AttentionUNet(nn.Module):
    def __init__(self, config: Optional[UNetConfig] = None):
        super().__init__()
        self.config = config or UNetConfig()
        self.version = MODEL_VERSION
        cfg = self.config
        depth = cfg.depth

        self.encoders = nn.ModuleList()
        in_ch = cfg.in_channels
        for level in range(depth):
            self.encoders.append(ConvBlock(in_ch, cfg.channels(level)))
            in_ch = cfg.channels(level)
        self.pool = nn.MaxPool2d(2)

        # decoder modules indexed by the level they produce (0 = finest)
        self.ups = nn.ModuleList([UpConv(cfg.channels(level + 1), cfg.channels(level)) for level in range(depth - 1)])
        self.gates = nn.ModuleList([
            AttentionGate(cfg.channels(level), cfg.channels(level + 1), cfg.f_int(level)) for level in range(depth - 1)
        ])
        self.decoders = nn.ModuleList([ConvBlock(2 * cfg.channels(level), cfg.channels(level)) for level in range(depth - 1)])
        self.head = nn.Conv2d(cfg.channels(0), 1, 1)
        init_weights(self)

    def encode(self, image: torch.Tensor) -> List[torch.Tensor]:
        feats = []
        h = image
        for level, enc in enumerate(self.encoders):
            if level > 0:
                h = self.pool(h)
            h = enc(h)
            feats.append(h)
        return feats

    def forward(self, image: torch.Tensor, identity_gates: bool = False):
        """Returns (logits, attention_maps) with maps ordered finest first.

        identity_gates=True forces alpha = 1, i.e. a plain skip-connection U-Net.
        """
        feats = self.encode(image)
        d = feats[-1]
        maps: List[AttentionMap] = []
        for level in reversed(range(self.config.depth - 1)):
            x = feats[level]
            if identity_gates:
                x_hat = x
                amap = AttentionMap(alpha=torch.ones_like(x[:, :1]), gate_index=level)
            else:
                x_hat, amap = self.gates[level](x, d)
                amap.gate_index = level
            up = self.ups[level](d)
            d = self.decoders[level](torch.cat([x_hat, up], dim=1))
            maps.append(amap)
        maps.reverse()
        return self.head(d), maps


def _as_batch(image: torch.Tensor) -> torch.Tensor:
    if image.dim() == 2:
        return image[None, None]
    if image.dim() == 3:
        return image[None]
    return image


def forward(image: torch.Tensor, model: AttentionUNet):
    """Shape-checked forward pass. Accepts (H, W), (1, H, W) or (B, 1, H, W) input."""
    batch = _as_batch(image)
    if tuple(batch.shape[-2:]) != tuple(model.config.input_size) or batch.shape[1] != model.config.in_channels:
        raise ShapeError(
            f"input shape {tuple(image.shape)} does not match model input "
            f"({model.config.in_channels}, {model.config.input_size[0]}, {model.config.input_size[1]})"
        )
    return model(batch)


def predict_mask(image: torch.Tensor, model: AttentionUNet, threshold: float = 0.5) -> torch.Tensor:
    """Binary mask sigmoid(logits) >= threshold, as uint8 (B, 1, H, W).

    The comparison is done in logit space so saturated probabilities cannot flip the
    threshold=0 / threshold=1 cases.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must be in [0, 1], got {threshold}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits, _ = forward(image, model)
    finally:
        model.train(was_training)
    if threshold == 0.0:
        return torch.ones_like(logits, dtype=torch.uint8)
    if threshold == 1.0:
        return torch.zeros_like(logits, dtype=torch.uint8)
    cut = math.log(threshold / (1.0 - threshold))
    return (logits >= cut).to(torch.uint8)


def attention_maps(image: torch.Tensor, model: AttentionUNet) -> List[AttentionMap]:
    """Inference-mode attention coefficients, finest gate first."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            _, maps = forward(image, model)
    finally:
        model.train(was_training)
    return maps


def save_segmenter(model: AttentionUNet, path) -> Path:
    return save_checkpoint({
        "kind": "segmenter",
        "model_version": model.version,
        "config": model.config.to_dict(),
        "params": module_to_arrays(model),
    }, path)


def load_segmenter(path, config: Optional[UNetConfig] = None) -> AttentionUNet:
    """Rebuild a segmenter from a checkpoint.

    With ``config`` given, the stored parameters must fit that architecture; a mismatch
    raises ShapeError naming the offending parameter.
    """
    record = load_checkpoint(path, kind="segmenter")
    if record.get("model_version") != MODEL_VERSION:
        raise CheckpointError(f"{path}: model version {record.get('model_version')} is not {MODEL_VERSION}")
    model = AttentionUNet(config or UNetConfig(**record["config"]))
    load_arrays_into(model, record["params"], what="segmenter")
    return model.eval()
