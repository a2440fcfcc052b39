# conftest.py
from pathlib import Path

import cv2
import numpy as np
import pytest
import torch

from src.components.data_ingestion import SamplePair
from src.components.data_transformation import AugmentConfig
from src.config import TrainConfig
from src.model_training.attention_unet import UNetConfig
from src.model_training.style_generator import GenConfig

# bitwise reproducibility checks assume single-threaded reductions
torch.set_num_threads(1)

TOY_SIZE = 64


def make_disc_pair(size: int = TOY_SIZE, cx: int = 32, cy: int = 32, radius: int = 12, seed: int = 0,
                   id: str = "disc") -> SamplePair:
    """Bright disc on a darker noisy background, with its exact mask."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2).astype(np.uint8)
    image = 0.2 + 0.6 * mask + rng.normal(0.0, 0.03, size=(size, size))
    return SamplePair(image=np.clip(image, 0.0, 1.0).astype(np.float32), mask=mask, id=id)


def toy_pairs(n: int, size: int = TOY_SIZE):
    rng = np.random.default_rng(1234)
    pairs = []
    for i in range(n):
        radius = int(rng.integers(size // 8, size // 4))
        cx = int(rng.integers(radius + 2, size - radius - 2))
        cy = int(rng.integers(radius + 2, size - radius - 2))
        pairs.append(make_disc_pair(size, cx, cy, radius, seed=i, id=f"toy_{i:03d}"))
    return pairs


def write_dataset(root: Path, pairs) -> Path:
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for p in pairs:
        cv2.imwrite(str(root / "images" / f"{p.id}.png"), np.round(p.image * 255).astype(np.uint8))
        cv2.imwrite(str(root / "masks" / f"{p.id}.png"), (p.mask * 255).astype(np.uint8))
    return root


def small_train_config(**overrides) -> TrainConfig:
    params = dict(
        epochs_pretrain=2,
        epochs_gan=2,
        batch_size=4,
        image_size=(TOY_SIZE, TOY_SIZE),
        seed=7,
        perceptual_extractor="identity",
        disc_base_channels=8,
        checkpoint_every=0,
        augment=AugmentConfig.disabled(),
        unet=UNetConfig(depth=3, base_channels=8, input_size=(TOY_SIZE, TOY_SIZE)),
        gen=GenConfig(depth=3, base_channels=8, latent_dim=8, style_dim=8, mapping_layers=2, noise_levels=1,
                      input_size=(TOY_SIZE, TOY_SIZE)),
    )
    params.update(overrides)
    return TrainConfig(**params)


@pytest.fixture
def disc_pair():
    return make_disc_pair()


@pytest.fixture
def pairs8():
    return toy_pairs(8)


@pytest.fixture
def small_cfg():
    return small_train_config()


@pytest.fixture
def unet_cfg():
    return UNetConfig(depth=3, base_channels=8, input_size=(TOY_SIZE, TOY_SIZE))


@pytest.fixture
def gen_cfg():
    return GenConfig(depth=3, base_channels=8, latent_dim=8, style_dim=8, mapping_layers=2, noise_levels=1,
                     input_size=(TOY_SIZE, TOY_SIZE))


@pytest.fixture
def dataset_dir(tmp_path):
    return write_dataset(tmp_path / "ds", toy_pairs(10))
