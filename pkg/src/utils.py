# src/utils.py
"""Shared helpers: seeding, image IO, JSON logs, checkpoint container, finite differences."""
from __future__ import annotations

import hashlib
import json
import os
import random
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import cv2
import joblib
import numpy as np
import torch
from torch.utils.data import default_collate

from src.exception import CheckpointError, IngestionError, ShapeError
from src.logger import get_logger

logger = get_logger(__name__)

CHECKPOINT_FORMAT = "sagegan-checkpoint"
CHECKPOINT_VERSION = 1
IMAGE_SUFFIXES = (".png", ".tif", ".tiff", ".bmp", ".jpg", ".jpeg")


# ---------------- Seeding ----------------
def set_seed(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False


def make_generators(seed: int) -> Tuple[np.random.Generator, torch.Generator]:
    """Independent numpy (augmentation, shuffling) and torch (latents, noise) streams."""
    return np.random.default_rng(seed), torch.Generator().manual_seed(seed)


# ---------------- Tensors ----------------
def pairs_to_tensors(pairs, device="cpu") -> Tuple[torch.Tensor, torch.Tensor]:
    """Stack SamplePairs into float32 (B, 1, H, W) image and mask tensors."""
    images = default_collate([np.asarray(p.image, dtype=np.float32) for p in pairs]).unsqueeze(1)
    masks = default_collate([np.asarray(p.mask, dtype=np.float32) for p in pairs]).unsqueeze(1)
    return images.to(device), masks.to(device)


def parameter_checksum(module: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


# ---------------- Image IO ----------------
def list_images(directory: Path) -> Dict[str, Path]:
    """stem -> path for every image file directly inside ``directory``."""
    return {p.stem: p for p in sorted(Path(directory).iterdir())
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


def read_grayscale(path: Path) -> np.ndarray:
    """Read a single-channel image and scale it to float32 [0, 1] by its dtype's full scale."""
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise IngestionError(f"could not read image file {path}")
    if arr.ndim != 2:
        raise IngestionError(f"{path} is not a grayscale image (shape {arr.shape})")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float32) / float(np.iinfo(arr.dtype).max)
    return np.clip(arr.astype(np.float32), 0.0, 1.0)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: Path, array: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), array):
        raise IngestionError(f"failed to write image {path}")


# ---------------- JSON ----------------
def save_json(path: Path, data: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, default=_json_default)


def load_json(path: Path) -> Any:
    with Path(path).open("r", encoding="utf-8") as f:
        return json.load(f)


def append_jsonl(path: Path, record: Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps(record, default=_json_default) + "\n")


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    with Path(path).open("r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (Path,)):
        return str(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


# ---------------- Checkpoint container ----------------
def module_to_arrays(module: torch.nn.Module) -> Dict[str, np.ndarray]:
    # 0-d entries (num_batches_tracked, b_psi, Adam step) keep shape ()
    return {name: t.detach().cpu().numpy().copy() for name, t in module.state_dict().items()}


def load_arrays_into(module: torch.nn.Module, arrays: Dict[str, np.ndarray], what: str = "model") -> None:
    """Copy named arrays into ``module``; every name and shape must match exactly."""
    own = module.state_dict()
    missing = sorted(set(own) - set(arrays))
    unexpected = sorted(set(arrays) - set(own))
    if missing or unexpected:
        raise ShapeError(f"{what} parameters do not match: missing {missing[:5]}, unexpected {unexpected[:5]}")
    for name, tensor in own.items():
        if tuple(arrays[name].shape) != tuple(tensor.shape):
            raise ShapeError(
                f"{what} parameter '{name}' has shape {tuple(arrays[name].shape)} in the checkpoint "
                f"but {tuple(tensor.shape)} in the model"
            )
    module.load_state_dict({name: torch.from_numpy(np.array(arr)) for name, arr in arrays.items()})


def tree_to_numpy(obj):
    """Recursively replace tensors by numpy arrays (optimizer state)."""
    if torch.is_tensor(obj):
        return obj.detach().cpu().numpy().copy()
    if isinstance(obj, dict):
        return {k: tree_to_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(tree_to_numpy(v) for v in obj)
    return obj


def tree_to_torch(obj):
    if isinstance(obj, np.ndarray):
        return torch.from_numpy(np.array(obj))
    if isinstance(obj, dict):
        return {k: tree_to_torch(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(tree_to_torch(v) for v in obj)
    return obj


def save_checkpoint(payload: Dict[str, Any], path: Path) -> Path:
    """Write a versioned checkpoint atomically (temp file + rename)."""
    path = Path(path)
    record = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION}
    record.update(payload)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        joblib.dump(record, tmp)
        os.replace(tmp, path)
    except OSError as e:
        tmp.unlink(missing_ok=True)
        logger.error(f"checkpoint write failed: {path}")
        raise CheckpointError(f"could not write checkpoint {path}: {e}") from e
    logger.info(f"checkpoint saved: {path}")
    return path


def load_checkpoint(path: Path, kind: Optional[str] = None) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        record = joblib.load(path)
    except Exception as e:
        raise CheckpointError(f"checkpoint {path} is corrupt or unreadable: {e}") from e
    if not isinstance(record, dict) or record.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if record.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch in {path}: file has {record.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    if kind is not None and record.get("kind") != kind:
        raise CheckpointError(f"{path} holds a '{record.get('kind')}' checkpoint, expected '{kind}'")
    return record


# ---------------- Finite differences ----------------
def numerical_gradient(fn: Callable[[], torch.Tensor], tensor: torch.Tensor, step: float = 1e-4) -> torch.Tensor:
    """Central-difference gradient of the scalar ``fn()`` w.r.t. ``tensor`` (perturbed in place)."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    flat_grad = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + step
            plus = float(fn())
            flat[i] = original - step
            minus = float(fn())
            flat[i] = original
            flat_grad[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-8) -> float:
    diff = (analytic - numeric).abs().max()
    scale = torch.maximum(analytic.abs().max(), numeric.abs().max()).clamp_min(floor)
    return float(diff / scale)
