# src/components/model_trainer.py
"""Phase 1: supervised pretraining of the attention U-Net segmenter."""
import copy
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from src.components.data_ingestion import DatasetSplit, SamplePair
from src.components.data_transformation import AugmentConfig, augment, preprocess
from src.config import TrainConfig
from src.exception import ParameterError
from src.logger import get_logger
from src.model_training.attention_unet import AttentionUNet
from src.model_training.losses import LossBreakdown, total_seg_loss
from src.model_training.metrics import evaluate_dataset
from src.utils import append_jsonl, make_generators, pairs_to_tensors, set_seed

logger = get_logger(__name__)

EpochCallback = Callable[[int, AttentionUNet], None]


def prepare_pairs(pairs: List[SamplePair], size) -> List[SamplePair]:
    return [preprocess(p, size) for p in pairs]


class PairDataset(Dataset):
    """SamplePairs augmented on access; every item draws from the one shared numpy stream."""

    def __init__(self, pairs: List[SamplePair], augment_cfg: AugmentConfig, rng: np.random.Generator):
        self.pairs = pairs
        self.augment_cfg = augment_cfg
        self.rng = rng

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, idx: int) -> SamplePair:
        return augment(self.pairs[idx], self.augment_cfg, self.rng)


def collate_pairs(batch: List[SamplePair]) -> List[SamplePair]:
    # batches stay SamplePair lists so provenance survives into the effective batch
    return list(batch)


def make_loader(pairs: List[SamplePair], cfg: TrainConfig, rng: np.random.Generator) -> DataLoader:
    """Shuffled single-process loader; the order follows a generator seeded from cfg.seed."""
    return DataLoader(
        PairDataset(pairs, cfg.augment, rng),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed),
        collate_fn=collate_pairs,
    )


def mean_records(records: List[Dict[str, float]]) -> Dict[str, float]:
    if not records:
        return {}
    return {key: float(np.mean([r[key] for r in records])) for key in records[0]}


def seg_step(model: AttentionUNet, optimizer: torch.optim.Optimizer, images: torch.Tensor, masks: torch.Tensor,
             cfg: TrainConfig, where: str) -> LossBreakdown:
    model.train()
    logits, _ = model(images)
    breakdown = total_seg_loss(torch.sigmoid(logits), masks, cfg.tversky, cfg.seg_weights,
                               mode=cfg.seg_loss_mode, focal_gamma=cfg.focal_gamma)
    breakdown.check_finite(where)
    optimizer.zero_grad(set_to_none=True)
    breakdown.total.backward()
    optimizer.step()
    return breakdown


def pretrain_segmenter(split: DatasetSplit, cfg: TrainConfig, model: Optional[AttentionUNet] = None,
                       history_path: Optional[Path] = None,
                       on_epoch_end: Optional[EpochCallback] = None) -> Tuple[AttentionUNet, List[Dict[str, float]]]:
    """Train for ``cfg.epochs_pretrain`` epochs; return the best-validation-Dice model and the history.

    Without a validation set the final epoch's weights are returned.
    """
    if not split.train:
        raise ParameterError("pretraining needs a non-empty training set")
    set_seed(cfg.seed, cfg.deterministic)
    np_rng, _ = make_generators(cfg.seed)
    device = torch.device(cfg.device)
    if model is None:
        model = AttentionUNet(cfg.unet)
    model.to(device)
    history: List[Dict[str, float]] = []
    if cfg.epochs_pretrain == 0:
        logger.info("epochs_pretrain=0: returning the initialized segmenter")
        return model, history

    train_pairs = prepare_pairs(split.train, cfg.image_size)
    val_pairs = prepare_pairs(split.val, cfg.image_size)
    loader = make_loader(train_pairs, cfg, np_rng)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_seg, betas=cfg.betas)
    best_dice, best_state = -1.0, None

    for epoch in range(1, cfg.epochs_pretrain + 1):
        step_records = []
        for batch in loader:
            images, masks = pairs_to_tensors(batch, device=device)
            breakdown = seg_step(model, optimizer, images, masks, cfg, where=f"pretraining epoch {epoch}")
            step_records.append(breakdown.as_dict())

        record = {"phase": "pretrain", "epoch": epoch, **mean_records(step_records)}
        if val_pairs:
            report = evaluate_dataset(model, val_pairs, threshold=cfg.threshold)
            record["val_dice"] = report.aggregate["dice"]
            record["val_f1"] = report.aggregate["f1"]
            if record["val_dice"] > best_dice:
                best_dice = record["val_dice"]
                best_state = copy.deepcopy(model.state_dict())
        history.append(record)
        if history_path is not None:
            append_jsonl(history_path, record)
        logger.info(
            f"[pretrain] epoch {epoch}/{cfg.epochs_pretrain} loss={record['total']:.4f} "
            f"val_dice={record.get('val_dice', float('nan')):.4f} val_f1={record.get('val_f1', float('nan')):.4f}"
        )
        if on_epoch_end is not None:
            on_epoch_end(epoch, model)

    if best_state is not None:
        model.load_state_dict(best_state)
        logger.info(f"restored best segmenter (val dice {best_dice:.4f})")
    return model, history
