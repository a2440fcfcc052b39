# src/model_training/losses.py
"""
Loss terms for both training phases.

Segmentation (Phase 1 and the segmenter side of Phase 2):
    cross_entropy_loss      -log(p_t), optional focusing exponent
    tversky_index           (TP + s) / (TP + a*FP + b*FN + s) on soft counts
    focal_tversky_loss      (1 - TI) ** gamma
    dice_loss               soft Dice loss, the ablation baseline
    total_seg_loss          lambda1 * CE + lambda2 * FTV  ->  LossBreakdown

Generation (Phase 2):
    adversarial_losses      least-squares generator / discriminator terms
    cycle_consistency_loss  L1 on both reconstruction directions
    perceptual_loss         L1 between frozen-extractor features
    l1_loss                 pixel L1
    total_gan_objective     weighted composition -> LossBreakdown

All functions take torch tensors and return 0-d tensors so they can be backpropagated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exception import ConfigurationError, ParameterError, ShapeError, TrainingDivergenceError
from src.logger import get_logger

logger = get_logger(__name__)

PROB_EPS = 1e-7


@dataclass
class TverskyParams:
    alpha: float = 0.3
    beta: float = 0.7
    gamma: float = 1.5
    smooth: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ParameterError(f"tversky alpha/beta must be >= 0 with a positive sum, got {self.alpha}, {self.beta}")
        if self.gamma <= 0:
            raise ParameterError(f"tversky gamma must be > 0, got {self.gamma}")
        if self.smooth <= 0:
            raise ParameterError(f"tversky smooth must be > 0, got {self.smooth}")


@dataclass
class SegLossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or (self.lambda1 == 0 and self.lambda2 == 0):
            raise ParameterError(f"segmentation weights must be >= 0 and not both 0, got {self.lambda1}, {self.lambda2}")


@dataclass
class GanLossWeights:
    lambda_cyc: float = 10.0
    lambda_perc: float = 1.0
    lambda_l1: float = 10.0
    # segmentation feedback on G(mask) inside the generator objective
    lambda_seg: float = 1.0
    # mask-discriminator term inside the segmenter objective
    lambda_adv_mask: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cyc", "lambda_perc", "lambda_l1", "lambda_seg", "lambda_adv_mask"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass
class LossBreakdown:
    """Named loss terms of one objective.

    ``weights`` lists the terms that make up ``total``; any other entry of ``terms`` is
    recorded for observability only (e.g. discriminator losses in a training step).
    """
    terms: Dict[str, torch.Tensor]
    weights: Dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> torch.Tensor:
        total = torch.zeros(())
        for name, weight in self.weights.items():
            total = total + weight * self.terms[name]
        return total

    def as_dict(self) -> Dict[str, float]:
        out = {name: float(value.detach()) if torch.is_tensor(value) else float(value)
               for name, value in self.terms.items()}
        out["total"] = float(self.total.detach()) if torch.is_tensor(self.total) else float(self.total)
        return out

    def check_finite(self, where: str) -> None:
        for name, value in self.terms.items():
            v = float(value.detach()) if torch.is_tensor(value) else float(value)
            if not math.isfinite(v):
                logger.error(f"non-finite loss term {name}={v} at {where}")
                raise TrainingDivergenceError(f"loss term '{name}' is {v} at {where}")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape {tuple(a.shape)} does not match {tuple(b.shape)}")


def cross_entropy_loss(pred_prob: torch.Tensor, target: torch.Tensor, focal_gamma: float = 0.0) -> torch.Tensor:
    """Mean of -(1 - p_t)**focal_gamma * log(p_t); focal_gamma=0 is plain cross-entropy."""
    _check_same_shape(pred_prob, target, "cross_entropy_loss")
    p = pred_prob.clamp(PROB_EPS, 1.0 - PROB_EPS)
    p_t = torch.where(target > 0.5, p, 1.0 - p)
    loss = -torch.log(p_t)
    if focal_gamma:
        loss = (1.0 - p_t) ** focal_gamma * loss
    return loss.mean()


def tversky_index(pred: torch.Tensor, target: torch.Tensor, p: TverskyParams) -> torch.Tensor:
    _check_same_shape(pred, target, "tversky_index")
    tp = (pred * target).sum()
    fp = (pred * (1.0 - target)).sum()
    fn = ((1.0 - pred) * target).sum()
    return (tp + p.smooth) / (tp + p.alpha * fp + p.beta * fn + p.smooth)


def focal_tversky_from_index(ti, gamma: float):
    # clamp keeps the fractional power real when rounding pushes TI a hair above 1
    if torch.is_tensor(ti):
        return (1.0 - ti).clamp_min(0.0) ** gamma
    return max(0.0, 1.0 - ti) ** gamma


def focal_tversky_loss(pred: torch.Tensor, target: torch.Tensor, p: TverskyParams) -> torch.Tensor:
    return focal_tversky_from_index(tversky_index(pred, target, p), p.gamma)


def dice_loss(pred: torch.Tensor, target: torch.Tensor, smooth: float = 1e-6) -> torch.Tensor:
    _check_same_shape(pred, target, "dice_loss")
    intersection = (pred * target).sum()
    return 1.0 - (2.0 * intersection + smooth) / (pred.sum() + target.sum() + smooth)


def total_seg_loss(pred: torch.Tensor, target: torch.Tensor, p: TverskyParams, w: SegLossWeights,
                   mode: str = "hybrid", focal_gamma: float = 0.0) -> LossBreakdown:
    """Segmentation objective on probabilities.

    mode="hybrid": lambda1 * CE + lambda2 * focal Tversky.
    mode="dice":   soft Dice loss alone (ablation baseline).
    """
    if mode == "hybrid":
        terms = {
            "ce": cross_entropy_loss(pred, target, focal_gamma=focal_gamma),
            "focal_tversky": focal_tversky_loss(pred, target, p),
        }
        return LossBreakdown(terms=terms, weights={"ce": w.lambda1, "focal_tversky": w.lambda2})
    if mode == "dice":
        return LossBreakdown(terms={"dice": dice_loss(pred, target, smooth=p.smooth)}, weights={"dice": 1.0})
    raise ParameterError(f"unknown segmentation loss mode '{mode}', expected 'hybrid' or 'dice'")


def adversarial_losses(d_real: torch.Tensor, d_fake: torch.Tensor):
    """Least-squares GAN terms with targets 1 (real) and 0 (fake).

    Returns (gen_term, disc_term). The caller decides which graph each term belongs to:
    the discriminator step passes detached fakes, the generator step fresh ones.
    """
    disc_term = ((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean()
    return generator_adversarial_loss(d_fake), disc_term


def generator_adversarial_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares term pushing discriminator scores of generated samples toward 1."""
    return ((d_fake - 1.0) ** 2).mean()


def cycle_consistency_loss(x: torch.Tensor, F_of_G_x: torch.Tensor,
                           y: torch.Tensor, G_of_F_y: torch.Tensor) -> torch.Tensor:
    _check_same_shape(x, F_of_G_x, "cycle_consistency_loss (mask cycle)")
    _check_same_shape(y, G_of_F_y, "cycle_consistency_loss (image cycle)")
    return (F_of_G_x - x).abs().mean() + (G_of_F_y - y).abs().mean()


def l1_loss(img_a: torch.Tensor, img_b: torch.Tensor) -> torch.Tensor:
    _check_same_shape(img_a, img_b, "l1_loss")
    return (img_a - img_b).abs().mean()


class IdentityExtractor(nn.Module):
    """Feature 'extractor' returning the input; perceptual loss then equals pixel L1."""

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        return [x]


class VGGFeatureExtractor(nn.Module):
    """Frozen ImageNet VGG16 truncated after relu2_2 and relu3_3.

    Grayscale inputs in [0, 1] are repeated to three channels and ImageNet-normalized.
    """

    LAYERS = (8, 15)  # relu2_2, relu3_3

    def __init__(self, layers: Sequence[int] = LAYERS):
        super().__init__()
        try:
            from torchvision.models import VGG16_Weights, vgg16
            features = vgg16(weights=VGG16_Weights.DEFAULT).features
        except Exception as e:
            raise ConfigurationError(
                f"perceptual extractor unavailable ({e}); disable the term with lambda_perc=0 "
                f"or perceptual_extractor='none'"
            ) from e
        self.layers = tuple(sorted(layers))
        self.features = features[: self.layers[-1] + 1].eval()
        for param in self.features.parameters():
            param.requires_grad = False
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def train(self, mode: bool = True):
        # stays in eval mode regardless of the owner
        return super().train(False)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        if x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        h = (x - self.mean) / self.std
        out = []
        for idx, layer in enumerate(self.features):
            h = layer(h)
            if idx in self.layers:
                out.append(h)
        return out


def build_extractor(name: str) -> Optional[nn.Module]:
    """'vgg16' | 'identity' | 'none'."""
    if name == "none":
        return None
    if name == "identity":
        return IdentityExtractor()
    if name == "vgg16":
        return VGGFeatureExtractor()
    raise ConfigurationError(f"unknown perceptual extractor '{name}', expected vgg16, identity or none")


def perceptual_loss(img_a: torch.Tensor, img_b: torch.Tensor,
                    extractor: Optional[Callable[[torch.Tensor], List[torch.Tensor]]]) -> torch.Tensor:
    """Mean over configured layers of the L1 distance between extractor features."""
    if extractor is None:
        raise ConfigurationError("perceptual loss requested without an extractor; set lambda_perc=0 to disable it")
    _check_same_shape(img_a, img_b, "perceptual_loss")
    feats_a = extractor(img_a)
    feats_b = extractor(img_b)
    return torch.stack([(fa - fb).abs().mean() for fa, fb in zip(feats_a, feats_b)]).mean()


def total_gan_objective(parts: Dict[str, torch.Tensor], w: GanLossWeights,
                        where: str = "generator objective") -> LossBreakdown:
    """adv_g + lambda_cyc*cyc + lambda_perc*perc + lambda_l1*l1 (+ lambda_seg*seg_feedback).

    Missing parts count as zero. Non-finite parts abort naming the term.
    """
    weights = {
        "adv_g": 1.0,
        "cyc": w.lambda_cyc,
        "perc": w.lambda_perc,
        "l1": w.lambda_l1,
        "seg_feedback": w.lambda_seg,
    }
    terms = {}
    for name in weights:
        value = parts.get(name)
        terms[name] = value if value is not None else torch.zeros(())
    for name, value in parts.items():
        terms.setdefault(name, value)
    breakdown = LossBreakdown(terms=terms, weights=weights)
    breakdown.check_finite(where)
    return breakdown
