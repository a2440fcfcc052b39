# src/model_training/metrics.py
"""
Binary segmentation metrics on {0,1} masks.

Conventions:
  - precision/recall with a zero denominator resolve to 1.0
  - Dice and F-measure of two empty masks resolve to 1.0 (agreement on absence)
  - dataset scores are unweighted per-image means
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd
import torch

from src.exception import DomainError, ParameterError, ShapeError
from src.logger import get_logger

logger = get_logger(__name__)

# Published validation scores of the compared models (Dice, F1)
COMPARISON_TABLE = {
    "Half U-Net": (0.595, 0.487),
    "DC U-Net": (0.584, 0.592),
    "U-Net": (0.681, 0.688),
    "U-Net++": (0.698, 0.682),
    "cGAN-Seg": (0.865, 0.862),
    "Attention U-Net": (0.869, 0.875),
    "SAGE-GAN": (0.932, 0.956),
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_binary(a, name: str) -> np.ndarray:
    if torch.is_tensor(a):
        a = a.detach().cpu().numpy()
    arr = np.asarray(a)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DomainError(f"{name} must be binary {{0,1}}, found values {np.unique(arr)[:5].tolist()}")
    return arr.astype(bool)


def confusion_counts(pred, gt) -> ConfusionCounts:
    p = _as_binary(pred, "prediction")
    g = _as_binary(gt, "ground truth")
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} does not match ground truth shape {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def dice_from_counts(c: ConfusionCounts, smooth: float = 0.0) -> float:
    denom = 2 * c.tp + c.fp + c.fn + smooth
    if denom == 0:
        return 1.0
    return (2 * c.tp + smooth) / denom


def dice_score(pred, gt, smooth: float = 0.0) -> float:
    return dice_from_counts(confusion_counts(pred, gt), smooth)


def precision_recall(c: ConfusionCounts):
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 1.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    return precision, recall


def f1_score(c: ConfusionCounts, beta: float = 1.0) -> float:
    """F-measure in count form: (1+b^2)TP / ((1+b^2)TP + b^2 FN + FP)."""
    if beta <= 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    b2 = beta * beta
    denom = (1 + b2) * c.tp + b2 * c.fn + c.fp
    if denom == 0:
        return 1.0
    return (1 + b2) * c.tp / denom


def relative_improvement(new: float, baseline: float) -> float:
    """Percentage gain of ``new`` over ``baseline``."""
    if baseline == 0:
        raise ParameterError("baseline score must be non-zero")
    return (new - baseline) / baseline * 100.0


@dataclass
class SegReport:
    per_image: List[Dict[str, Any]]
    aggregate: Dict[str, float]
    config: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.per_image, columns=["id", "dice", "f1", "precision", "recall"])

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SegReport":
        return cls(per_image=list(data["per_image"]), aggregate=dict(data["aggregate"]), config=dict(data.get("config", {})))


def score_masks(ids: Sequence[str], preds: Sequence, gts: Sequence, beta: float = 1.0, config=None) -> SegReport:
    """Build a SegReport from already-binarized predictions."""
    if not len(ids):
        raise ParameterError("cannot build a report from zero images")
    rows = []
    for sample_id, pred, gt in zip(ids, preds, gts):
        counts = confusion_counts(pred, gt)
        precision, recall = precision_recall(counts)
        rows.append({
            "id": sample_id,
            "dice": dice_from_counts(counts),
            "f1": f1_score(counts, beta),
            "precision": precision,
            "recall": recall,
        })
    frame = pd.DataFrame(rows)
    aggregate = {"dice": float(frame["dice"].mean()), "f1": float(frame["f1"].mean())}
    cfg = {"aggregation": "image-mean", "beta": beta}
    cfg.update(config or {})
    return SegReport(per_image=rows, aggregate=aggregate, config=cfg)


def evaluate_dataset(model, pairs, threshold: float = 0.5, beta: float = 1.0, batch_size: int = 8) -> SegReport:
    """Score ``model`` on ``pairs`` in a fixed order."""
    from src.model_training.attention_unet import predict_mask
    from src.utils import pairs_to_tensors

    if not pairs:
        raise ParameterError("evaluate_dataset needs at least one pair")
    device = next(model.parameters()).device
    preds = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        images, _ = pairs_to_tensors(chunk, device=device)
        preds.extend(predict_mask(images, model, threshold)[:, 0].cpu().numpy())
    report = score_masks([p.id for p in pairs], preds, [p.mask for p in pairs], beta=beta,
                         config={"threshold": threshold, "n_images": len(pairs)})
    logger.info(f"evaluated {len(pairs)} images: dice={report.aggregate['dice']:.4f} f1={report.aggregate['f1']:.4f}")
    return report
