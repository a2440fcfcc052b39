# src/config.py
"""
Configuration dataclasses.

Layering for CLI runs: dataclass defaults < JSON config file < command-line flags.
"""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from src.components.data_transformation import AugmentConfig
from src.exception import ConfigurationError, ParameterError
from src.model_training.attention_unet import UNetConfig
from src.model_training.losses import GanLossWeights, SegLossWeights, TverskyParams
from src.model_training.style_generator import GenConfig
from src.utils import load_json

ARTIFACTS_DIR = Path(os.getenv("SAGEGAN_ARTIFACTS_DIR", "artifacts"))


@dataclass
class TrainConfig:
    epochs_pretrain: int = 200
    epochs_gan: int = 500
    batch_size: int = 4
    image_size: Tuple[int, int] = (256, 256)
    seed: int = 42
    split_ratio: float = 0.8
    # Adam for every network
    lr_seg: float = 2e-4
    lr_gen: float = 2e-4
    lr_disc: float = 2e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    # Phase 2: update the embedded segmenter at lr_seg * seg_finetune_lr_scale
    seg_finetune: bool = True
    seg_finetune_lr_scale: float = 0.1
    seg_loss_mode: str = "hybrid"
    focal_gamma: float = 0.0
    threshold: float = 0.5
    perceptual_extractor: str = "vgg16"
    disc_base_channels: int = 32
    checkpoint_every: int = 50
    attention_every: int = 0
    device: str = "cpu"
    deterministic: bool = True
    tversky: TverskyParams = field(default_factory=TverskyParams)
    seg_weights: SegLossWeights = field(default_factory=SegLossWeights)
    gan_weights: GanLossWeights = field(default_factory=GanLossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    gen: GenConfig = field(default_factory=GenConfig)

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.betas = tuple(float(v) for v in self.betas)
        if self.epochs_pretrain < 0 or self.epochs_gan < 0:
            raise ParameterError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seg_loss_mode not in ("hybrid", "dice"):
            raise ParameterError(f"seg_loss_mode must be 'hybrid' or 'dice', got {self.seg_loss_mode}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ParameterError(f"threshold must be in [0, 1], got {self.threshold}")
        # image_size is the single source of truth for both networks
        if self.unet.input_size != self.image_size:
            self.unet = dataclasses.replace(self.unet, input_size=self.image_size)
        if self.gen.input_size != self.image_size:
            self.gen = dataclasses.replace(self.gen, input_size=self.image_size)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class RunConfig:
    command: str = ""
    data: Optional[str] = None
    out: str = str(ARTIFACTS_DIR)
    checkpoint: Optional[str] = None
    seg_checkpoint: Optional[str] = None
    input: Optional[str] = None
    manifest: Optional[str] = None
    config: Optional[str] = None
    layer: int = 0
    colormap: str = "turbo"
    alpha: float = 0.5
    n_jobs: int = 1
    figures: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def build_dataclass(cls, data: Dict[str, Any], where: str = ""):
    """Instantiate ``cls`` from a (possibly nested) dict; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"expected a mapping for {where or cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigurationError(f"unknown config keys in {where or cls.__name__}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            value = build_dataclass(hint, value, f"{where}.{name}" if where else name)
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def merge_dicts(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_dicts(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """defaults < JSON file < overrides (already-parsed CLI flags, nested like the file)."""
    data: Dict[str, Any] = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            data = load_json(path)
        except ValueError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    data = merge_dicts(data, overrides or {})
    return build_dataclass(RunConfig, data)
