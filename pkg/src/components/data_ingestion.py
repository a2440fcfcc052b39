# src/components/data_ingestion.py
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import train_test_split

from src.exception import IngestionError, ParameterError
from src.logger import get_logger
from src.utils import list_images, read_grayscale

logger = get_logger(__name__)

MASK_THRESHOLD = 0.5


# -------------------------------
# Domain types
# -------------------------------
@dataclass
class SamplePair:
    image: np.ndarray          # float32 (H, W) in [0, 1]
    mask: np.ndarray           # uint8 (H, W) in {0, 1}
    id: str
    source: str = "real"       # "real" | "synthetic"

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise IngestionError(f"{self.id}: image shape {self.image.shape} differs from mask shape {self.mask.shape}")


@dataclass
class DatasetSplit:
    train: List[SamplePair]
    val: List[SamplePair]
    seed: int
    ratio: float


def binarize_mask(mask: np.ndarray, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    return (mask >= threshold).astype(np.uint8)


def _read_pair(stem: str, image_path: Path, mask_path: Path) -> SamplePair:
    image = read_grayscale(image_path)
    mask = binarize_mask(read_grayscale(mask_path))
    return SamplePair(image=image, mask=mask, id=stem)


# -------------------------------
# Operations
# -------------------------------
def load_dataset(root, n_jobs: int = 1) -> List[SamplePair]:
    """Load ``root/images`` and ``root/masks`` pairs matched by filename stem, sorted by stem."""
    root = Path(root)
    image_dir, mask_dir = root / "images", root / "masks"
    for directory in (root, image_dir, mask_dir):
        if not directory.is_dir():
            logger.error(f"dataset directory missing: {directory}")
            raise IngestionError(f"dataset directory not found: {directory}")

    images = list_images(image_dir)
    masks = list_images(mask_dir)
    if not images and not masks:
        raise IngestionError(f"dataset at {root} is empty")

    no_mask = sorted(set(images) - set(masks))
    no_image = sorted(set(masks) - set(images))
    if no_mask or no_image:
        parts = []
        if no_mask:
            parts.append(f"images without mask: {', '.join(no_mask)}")
        if no_image:
            parts.append(f"masks without image: {', '.join(no_image)}")
        raise IngestionError(f"unmatched stems in {root}: " + "; ".join(parts))

    stems = sorted(images)
    pairs = Parallel(n_jobs=n_jobs)(delayed(_read_pair)(s, images[s], masks[s]) for s in stems)
    logger.info(f"loaded {len(pairs)} image/mask pairs from {root}")
    return list(pairs)


def split_dataset(pairs: List[SamplePair], ratio: float = 0.8, seed: int = 42) -> DatasetSplit:
    """Seeded partition with |train| = floor(ratio * N)."""
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(pairs)
    if n < 2:
        raise ParameterError(f"need at least 2 pairs to split, got {n}")
    n_train = int(math.floor(ratio * n + 1e-9))
    if n_train == 0 or n_train == n:
        raise ParameterError(f"ratio {ratio} on {n} pairs leaves an empty partition")
    train, val = train_test_split(list(pairs), train_size=n_train, random_state=seed, shuffle=True)
    logger.info(f"split {n} pairs into {len(train)} train / {len(val)} val (seed={seed})")
    return DatasetSplit(train=list(train), val=list(val), seed=seed, ratio=ratio)


# -------------------------------
# Split manifest
# -------------------------------
def write_split_manifest(split: DatasetSplit, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"seed={split.seed}", f"ratio={split.ratio}", "[train]"]
    lines += [p.id for p in split.train]
    lines.append("[val]")
    lines += [p.id for p in split.val]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"split manifest written to {path}")
    return path


def read_split_manifest(path) -> Dict[str, object]:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"split manifest not found: {path}")
    manifest = {"seed": None, "ratio": None, "train": [], "val": []}
    section = None
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line in ("[train]", "[val]"):
            section = line[1:-1]
        elif section is None and "=" in line:
            key, value = line.split("=", 1)
            manifest[key.strip()] = int(value) if key.strip() == "seed" else float(value)
        elif section is not None:
            manifest[section].append(line)
        else:
            raise IngestionError(f"malformed split manifest line in {path}: {raw!r}")
    return manifest


def apply_split_manifest(pairs: List[SamplePair], manifest: Dict[str, object]) -> DatasetSplit:
    by_id = {p.id: p for p in pairs}
    wanted = list(manifest["train"]) + list(manifest["val"])
    missing = [stem for stem in wanted if stem not in by_id]
    if missing:
        raise IngestionError(f"split manifest names stems missing from the dataset: {', '.join(missing[:10])}")
    return DatasetSplit(
        train=[by_id[s] for s in manifest["train"]],
        val=[by_id[s] for s in manifest["val"]],
        seed=manifest["seed"],
        ratio=manifest["ratio"],
    )


# -------------------------------
# Data Ingestion Class
# -------------------------------
@dataclass
class DataIngestionConfig:
    root: Path
    artifacts_dir: Path = Path("artifacts")
    ratio: float = 0.8
    seed: int = 42
    n_jobs: int = 1
    manifest_name: str = "split_manifest.txt"

    @property
    def manifest_path(self) -> Path:
        return Path(self.artifacts_dir) / self.manifest_name


class DataIngestion:
    def __init__(self, ingestion_config: DataIngestionConfig):
        self.ingestion_config = ingestion_config

    def initiate_data_ingestion(self) -> DatasetSplit:
        cfg = self.ingestion_config
        logger.info("Entered the data ingestion method")
        pairs = load_dataset(cfg.root, n_jobs=cfg.n_jobs)
        split = split_dataset(pairs, ratio=cfg.ratio, seed=cfg.seed)
        write_split_manifest(split, cfg.manifest_path)
        logger.info("Data ingestion completed successfully")
        return split
