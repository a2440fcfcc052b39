# src/model_training/visualization.py
"""Attention heatmap overlays and static figures (files only, no interactive viewers)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import cv2
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import torch  # noqa: E402

from src.exception import ParameterError, ShapeError  # noqa: E402
from src.logger import get_logger  # noqa: E402
from src.model_training.attention_unet import AttentionMap  # noqa: E402
from src.utils import to_uint8, write_png  # noqa: E402

logger = get_logger(__name__)

DEFAULT_COLORMAP = "turbo"
CONSTANT_MAP_LEVEL = 0.5

MapLike = Union[AttentionMap, np.ndarray, torch.Tensor]


@dataclass
class OverlayImage:
    base: np.ndarray    # (H, W) grayscale in [0, 1]
    heat: np.ndarray    # (H, W) normalized attention in [0, 1]
    blend: np.ndarray   # (H, W, 3) RGB in [0, 1]
    colormap: str
    alpha: float

    def to_uint8(self) -> np.ndarray:
        return to_uint8(self.blend)


def _as_2d(array, what: str) -> np.ndarray:
    if isinstance(array, AttentionMap):
        array = array.as_array()
    elif torch.is_tensor(array):
        array = array.detach().cpu().numpy()
    array = np.asarray(array, dtype=np.float64)
    array = np.squeeze(array)
    if array.ndim != 2:
        raise ShapeError(f"{what} must be 2-D after squeezing, got shape {array.shape}")
    return array


def normalize_map(heat: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant map becomes uniformly 0.5."""
    lo, hi = float(heat.min()), float(heat.max())
    if hi - lo <= 0.0:
        return np.full_like(heat, CONSTANT_MAP_LEVEL, dtype=np.float64)
    return (heat - lo) / (hi - lo)


def apply_colormap(heat: np.ndarray, colormap: str = DEFAULT_COLORMAP) -> np.ndarray:
    try:
        cmap = matplotlib.colormaps[colormap]
    except KeyError as e:
        raise ParameterError(f"unknown colormap '{colormap}'") from e
    return cmap(heat)[..., :3]


def render_attention_overlay(image, maps: Sequence[MapLike], layer: int = 0,
                             colormap: str = DEFAULT_COLORMAP, alpha: float = 0.5) -> OverlayImage:
    """Blend the ``layer``-th attention map (0 = finest gate) over ``image``.

    blend = (1 - alpha) * gray + alpha * colormap(normalized heat)
    """
    if not maps:
        raise ParameterError("no attention maps to render")
    if not 0 <= layer < len(maps):
        raise ParameterError(f"attention layer {layer} is out of range; available indices: {list(range(len(maps)))}")
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")

    base = np.clip(_as_2d(image, "image"), 0.0, 1.0)
    heat = normalize_map(_as_2d(maps[layer], "attention map"))
    h, w = base.shape
    if heat.shape != (h, w):
        heat = np.clip(cv2.resize(heat, (w, h), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)

    colored = apply_colormap(heat, colormap)
    gray = np.repeat(base[..., None], 3, axis=2)
    blend = (1.0 - alpha) * gray + alpha * colored
    return OverlayImage(base=base, heat=heat, blend=blend, colormap=colormap, alpha=alpha)


def save_overlay(overlay: OverlayImage, path) -> Path:
    path = Path(path)
    write_png(path, cv2.cvtColor(overlay.to_uint8(), cv2.COLOR_RGB2BGR))
    return path


def _render_panels(panels: List[Tuple[str, np.ndarray]], path, title: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 4))
    for ax, (name, panel) in zip(axes, panels):
        ax.imshow(np.squeeze(panel), cmap="gray", vmin=0, vmax=1)
        ax.set_title(name)
        ax.axis("off")
    if title:
        fig.suptitle(title)
    plt.tight_layout()
    plt.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def render_segmentation_triplet(image: np.ndarray, gt: np.ndarray, pred: np.ndarray, path,
                                title: str = "") -> Path:
    """Image | ground truth | prediction panels."""
    return _render_panels([("Image", image), ("Ground Truth", gt), ("Predicted Mask", pred)], path, title)


def render_synthetic_pair(mask: np.ndarray, synthetic: np.ndarray, path, title: str = "") -> Path:
    """Source mask | generated image."""
    return _render_panels([("Mask", mask), ("Synthetic", synthetic)], path, title)


def render_attention_evolution(snapshots: List[Tuple[int, OverlayImage]], path) -> Path:
    """Overlays taken at increasing epochs, side by side."""
    if not snapshots:
        raise ParameterError("no attention snapshots to lay out")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, len(snapshots), figsize=(3 * len(snapshots), 3.2), squeeze=False)
    for ax, (epoch, overlay) in zip(axes[0], snapshots):
        ax.imshow(overlay.blend)
        ax.set_title(f"epoch {epoch}")
        ax.axis("off")
    plt.tight_layout()
    plt.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


LOSS_EXCLUDE = ("phase", "epoch", "val_dice", "val_f1")


def plot_history(history: List[Dict[str, float]], path) -> Path:
    """Per-epoch loss terms (left) and validation Dice/F1 (right)."""
    if not history:
        raise ParameterError("history is empty")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(history)
    loss_cols = [c for c in frame.columns if c not in LOSS_EXCLUDE and pd.api.types.is_numeric_dtype(frame[c])]

    fig, axes = plt.subplots(1, 2, figsize=(14, 5))
    ax1, ax2 = axes
    for col in loss_cols:
        ax1.plot(frame["epoch"], frame[col], label=col, linewidth=2)
    ax1.set_xlabel("Epoch")
    ax1.set_ylabel("Loss")
    ax1.set_title("Training losses")
    ax1.legend(loc="upper right", fontsize=8)
    ax1.grid(True, alpha=0.3, linestyle="--")

    for col, marker in (("val_dice", "o"), ("val_f1", "s")):
        if col in frame:
            ax2.plot(frame["epoch"], frame[col], label=col, linewidth=2, marker=marker, markersize=4)
    if "val_dice" in frame and frame["val_dice"].notna().any():
        best = float(frame["val_dice"].max())
        ax2.axhline(y=best, color="red", linestyle=":", alpha=0.5, linewidth=1)
        ax2.set_title(f"Validation - best Dice: {best:.4f}")
    else:
        ax2.set_title("Validation")
    ax2.set_xlabel("Epoch")
    ax2.set_ylim(0, 1.05)
    ax2.legend(loc="lower right", fontsize=10)
    ax2.grid(True, alpha=0.3, linestyle="--")

    plt.tight_layout()
    plt.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
