# src/components/data_transformation.py
"""Resizing/normalization and stochastic augmentation of SamplePairs."""
from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import cv2
import numpy as np

from src.components.data_ingestion import SamplePair
from src.exception import ParameterError
from src.logger import get_logger

logger = get_logger(__name__)


@dataclass
class AugmentConfig:
    flip_h: float = 0.5
    flip_v: float = 0.5
    clahe: bool = True
    clahe_clip_limit: float = 2.0
    clahe_tile_grid: Tuple[int, int] = (8, 8)
    random_crop: bool = True
    crop_fraction: float = 0.9

    def __post_init__(self):
        self.clahe_tile_grid = tuple(int(v) for v in self.clahe_tile_grid)
        for name in ("flip_h", "flip_v"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must be a probability in [0, 1], got {getattr(self, name)}")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ParameterError(f"crop_fraction must be in (0, 1], got {self.crop_fraction}")
        if self.clahe_clip_limit <= 0 or min(self.clahe_tile_grid) < 1:
            raise ParameterError("CLAHE clip limit must be > 0 and tile grid entries >= 1")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(flip_h=0.0, flip_v=0.0, clahe=False, random_crop=False)


def resize_image(image: np.ndarray, size: Sequence[int]) -> np.ndarray:
    h, w = size
    out = cv2.resize(image.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


def resize_mask(mask: np.ndarray, size: Sequence[int]) -> np.ndarray:
    h, w = size
    out = cv2.resize(mask.astype(np.uint8), (w, h), interpolation=cv2.INTER_NEAREST)
    return (out > 0).astype(np.uint8)


def preprocess(pair: SamplePair, size: Tuple[int, int]) -> SamplePair:
    """Bilinear image / nearest-neighbour mask resize to ``size`` = (H, W)."""
    h, w = int(size[0]), int(size[1])
    if h <= 0 or w <= 0:
        raise ParameterError(f"target size must be positive, got {size}")
    if pair.image.shape == (h, w):
        return replace(pair, image=np.clip(pair.image, 0.0, 1.0).astype(np.float32), mask=pair.mask.astype(np.uint8))
    return replace(pair, image=resize_image(pair.image, (h, w)), mask=resize_mask(pair.mask, (h, w)))


def hflip(pair: SamplePair) -> SamplePair:
    return replace(pair, image=np.ascontiguousarray(pair.image[:, ::-1]), mask=np.ascontiguousarray(pair.mask[:, ::-1]))


def vflip(pair: SamplePair) -> SamplePair:
    return replace(pair, image=np.ascontiguousarray(pair.image[::-1]), mask=np.ascontiguousarray(pair.mask[::-1]))


def random_crop(pair: SamplePair, fraction: float, rng: np.random.Generator) -> SamplePair:
    """Crop ``fraction`` of each side at a random offset, then resize back to the original size."""
    h, w = pair.image.shape
    ch, cw = max(1, int(round(h * fraction))), max(1, int(round(w * fraction)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    image = pair.image[top:top + ch, left:left + cw]
    mask = pair.mask[top:top + ch, left:left + cw]
    if (ch, cw) == (h, w):
        return replace(pair, image=image.copy(), mask=mask.copy())
    return replace(pair, image=resize_image(image, (h, w)), mask=resize_mask(mask, (h, w)))


def apply_clahe(image: np.ndarray, clip_limit: float, tile_grid: Tuple[int, int]) -> np.ndarray:
    clahe = cv2.createCLAHE(clipLimit=clip_limit, tileGridSize=tuple(tile_grid))
    as_u8 = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return clahe.apply(as_u8).astype(np.float32) / 255.0


def augment(pair: SamplePair, cfg: AugmentConfig, rng: np.random.Generator) -> SamplePair:
    """Geometric transforms on image and mask alike, then CLAHE on the image only."""
    out = pair
    if cfg.flip_h > 0 and rng.random() < cfg.flip_h:
        out = hflip(out)
    if cfg.flip_v > 0 and rng.random() < cfg.flip_v:
        out = vflip(out)
    if cfg.random_crop and cfg.crop_fraction < 1.0:
        out = random_crop(out, cfg.crop_fraction, rng)
    if cfg.clahe:
        out = replace(out, image=apply_clahe(out.image, cfg.clahe_clip_limit, cfg.clahe_tile_grid))
    return out
