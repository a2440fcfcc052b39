# src/model_training/model_trainer.py
"""
Phase 2: the pretrained segmenter embedded in a cycle-consistent adversarial loop.

    G  = style generator      mask  -> image
    F  = attention U-Net      image -> mask probabilities
    D_image / D_mask          patch discriminators on each domain

Every step synthesizes fresh (G(mask), mask) pairs from the real training masks and, when
the segmenter is fine-tuned, trains it on the union of real and synthetic pairs.
Update order per step: D_image, D_mask, G, F.
"""
from __future__ import annotations

import copy
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from src.components.data_ingestion import DatasetSplit, SamplePair
from src.components.model_trainer import make_loader, mean_records, prepare_pairs
from src.config import TrainConfig
from src.exception import CheckpointError, ConfigurationError, ParameterError
from src.logger import get_logger
from src.model_training.attention_unet import AttentionUNet, UNetConfig, load_segmenter, save_segmenter
from src.model_training.discriminator import PatchDiscriminator
from src.model_training.losses import (
    LossBreakdown,
    adversarial_losses,
    build_extractor,
    cycle_consistency_loss,
    generator_adversarial_loss,
    l1_loss,
    perceptual_loss,
    total_gan_objective,
    total_seg_loss,
)
from src.model_training.metrics import evaluate_dataset
from src.model_training.style_generator import GenConfig, StyleUNetGenerator, sample_latent
from src.utils import (
    append_jsonl,
    load_arrays_into,
    load_checkpoint,
    make_generators,
    module_to_arrays,
    pairs_to_tensors,
    save_checkpoint,
    set_seed,
    tree_to_numpy,
    tree_to_torch,
)

logger = get_logger(__name__)

CYCLE_VERSION = "sagegan-cycle/1"
NETWORKS = ("gen", "seg", "disc_image", "disc_mask")


@dataclass
class CycleState:
    gen: StyleUNetGenerator
    seg: AttentionUNet
    disc_image: PatchDiscriminator
    disc_mask: PatchDiscriminator
    optimizers: Dict[str, torch.optim.Optimizer]
    extractor: Optional[nn.Module] = None
    iteration: int = 0
    disc_base_channels: int = 32
    # provenance of the last segmenter batch ("real" / "synthetic")
    last_batch_sources: List[str] = field(default_factory=list)
    best_val_dice: float = -1.0
    best_seg_state: Optional[Dict[str, torch.Tensor]] = None

    def network(self, name: str) -> nn.Module:
        return getattr(self, name)

    def remember_best_seg(self, val_dice: float) -> None:
        self.best_val_dice = val_dice
        self.best_seg_state = copy.deepcopy(self.seg.state_dict())

    def best_seg(self) -> AttentionUNet:
        """Copy of the segmenter at its best validation Dice; the current one if never validated."""
        model = copy.deepcopy(self.seg)
        if self.best_seg_state is not None:
            model.load_state_dict(self.best_seg_state)
        return model.eval()


@dataclass
class SyntheticBatch:
    images: torch.Tensor   # (B, 1, H, W) in [0, 1], detached
    masks: torch.Tensor    # (B, 1, H, W) the source masks, unchanged
    latents: torch.Tensor  # (B, latent_dim)
    iteration: int

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def pairs(self) -> List[SamplePair]:
        images = self.images[:, 0].detach().cpu().numpy().astype(np.float32)
        masks = self.masks[:, 0].detach().cpu().numpy().astype(np.uint8)
        return [
            SamplePair(image=img, mask=m, id=f"synthetic-{self.iteration}-{i}", source="synthetic")
            for i, (img, m) in enumerate(zip(images, masks))
        ]


@contextmanager
def frozen_statistics(module: nn.Module):
    """Run ``module`` in eval mode (no batch-norm statistic updates), restoring its mode afterwards."""
    was_training = module.training
    module.eval()
    try:
        yield module
    finally:
        module.train(was_training)


def _optimizer(module: nn.Module, lr: float, betas) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=lr, betas=tuple(betas))


def init_cycle_state(seg: AttentionUNet, cfg: TrainConfig) -> CycleState:
    """Fresh generator and discriminators around a (copied) pretrained segmenter."""
    if tuple(seg.config.input_size) != tuple(cfg.image_size):
        raise ParameterError(f"segmenter input size {seg.config.input_size} differs from image_size {cfg.image_size}")
    extractor = None
    if cfg.gan_weights.lambda_perc > 0:
        extractor = build_extractor(cfg.perceptual_extractor)
        if extractor is None:
            raise ConfigurationError("lambda_perc > 0 needs a perceptual extractor; set lambda_perc=0 to disable it")
    device = torch.device(cfg.device)
    seg = copy.deepcopy(seg).to(device).train()
    gen = StyleUNetGenerator(cfg.gen).to(device)
    disc_image = PatchDiscriminator(1, cfg.disc_base_channels).to(device)
    disc_mask = PatchDiscriminator(1, cfg.disc_base_channels).to(device)
    if extractor is not None:
        extractor = extractor.to(device)
    optimizers = {
        "gen": _optimizer(gen, cfg.lr_gen, cfg.betas),
        "seg": _optimizer(seg, cfg.lr_seg * cfg.seg_finetune_lr_scale, cfg.betas),
        "disc_image": _optimizer(disc_image, cfg.lr_disc, cfg.betas),
        "disc_mask": _optimizer(disc_mask, cfg.lr_disc, cfg.betas),
    }
    return CycleState(gen=gen, seg=seg, disc_image=disc_image, disc_mask=disc_mask, optimizers=optimizers,
                      extractor=extractor, disc_base_channels=cfg.disc_base_channels)


# -------------------------------
# Online synthetic augmentation
# -------------------------------
def make_synthetic_batch(masks: Union[torch.Tensor, Sequence[np.ndarray]], gen: StyleUNetGenerator,
                         rng: torch.Generator, iteration: int = 0) -> SyntheticBatch:
    """One generated image per real mask, each with its own latent code."""
    if not torch.is_tensor(masks):
        masks = torch.from_numpy(np.stack([np.asarray(m, dtype=np.float32) for m in masks])[:, None])
    if masks.dim() == 3:
        masks = masks[:, None]
    device = next(gen.parameters()).device
    masks = masks.float().to(device)
    z = sample_latent(masks.shape[0], gen, rng).to(device)
    with torch.no_grad():
        images = gen(masks, z, rng)
    return SyntheticBatch(images=images.detach(), masks=masks, latents=z, iteration=iteration)


def effective_batch(real: Sequence[SamplePair], synth: Optional[SyntheticBatch],
                    rng: Optional[torch.Generator] = None) -> List[SamplePair]:
    """Real pairs plus synthetic pairs, shuffled with ``rng`` when both are present."""
    pairs = list(real)
    if synth is None or len(synth) == 0:
        return pairs
    pairs += synth.pairs
    if rng is None:
        return pairs
    order = torch.randperm(len(pairs), generator=rng).tolist()
    return [pairs[i] for i in order]


# -------------------------------
# Per-network updates
# -------------------------------
def update_image_discriminator(state: CycleState, real_images: torch.Tensor, fake_images: torch.Tensor) -> torch.Tensor:
    _, loss = adversarial_losses(state.disc_image(real_images), state.disc_image(fake_images.detach()))
    opt = state.optimizers["disc_image"]
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    return loss.detach()


def update_mask_discriminator(state: CycleState, real_masks: torch.Tensor, fake_masks: torch.Tensor) -> torch.Tensor:
    _, loss = adversarial_losses(state.disc_mask(real_masks), state.disc_mask(fake_masks.detach()))
    opt = state.optimizers["disc_mask"]
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    return loss.detach()


def update_generator(state: CycleState, images: torch.Tensor, masks: torch.Tensor, z: torch.Tensor,
                     cfg: TrainConfig, rng: torch.Generator) -> LossBreakdown:
    """One generator step. Only the generator optimizer steps; stray gradients are cleared."""
    w = cfg.gan_weights
    opt = state.optimizers["gen"]
    opt.zero_grad(set_to_none=True)

    fake_images = state.gen(masks, z, rng)
    parts = {"adv_g": generator_adversarial_loss(state.disc_image(fake_images))}
    with frozen_statistics(state.seg):
        needs_mask_cycle = w.lambda_cyc > 0 or w.lambda_seg > 0
        rec_masks = torch.sigmoid(state.seg(fake_images)[0]) if needs_mask_cycle else None
        if w.lambda_cyc > 0:
            pred_masks = torch.sigmoid(state.seg(images)[0])
            rec_images = state.gen(pred_masks, z, rng)
            parts["cyc"] = cycle_consistency_loss(masks, rec_masks, images, rec_images)
        if w.lambda_seg > 0:
            parts["seg_feedback"] = total_seg_loss(rec_masks, masks, cfg.tversky, cfg.seg_weights,
                                                   mode=cfg.seg_loss_mode, focal_gamma=cfg.focal_gamma).total
    if w.lambda_perc > 0:
        parts["perc"] = perceptual_loss(fake_images, images, state.extractor)
    if w.lambda_l1 > 0:
        parts["l1"] = l1_loss(fake_images, images)

    breakdown = total_gan_objective(parts, w, where=f"iteration {state.iteration}")
    breakdown.total.backward()
    opt.step()
    for name in ("seg", "disc_image", "disc_mask"):
        state.network(name).zero_grad(set_to_none=True)
    return breakdown


def update_segmenter(state: CycleState, pairs: List[SamplePair], cfg: TrainConfig) -> LossBreakdown:
    device = next(state.seg.parameters()).device
    images, masks = pairs_to_tensors(pairs, device=device)
    opt = state.optimizers["seg"]
    opt.zero_grad(set_to_none=True)
    state.seg.train()
    probs = torch.sigmoid(state.seg(images)[0])
    seg_bd = total_seg_loss(probs, masks, cfg.tversky, cfg.seg_weights,
                            mode=cfg.seg_loss_mode, focal_gamma=cfg.focal_gamma)
    terms = dict(seg_bd.terms)
    weights = dict(seg_bd.weights)
    if cfg.gan_weights.lambda_adv_mask > 0:
        terms["adv_mask"] = generator_adversarial_loss(state.disc_mask(probs))
        weights["adv_mask"] = cfg.gan_weights.lambda_adv_mask
    breakdown = LossBreakdown(terms=terms, weights=weights)
    breakdown.check_finite(f"segmenter update, iteration {state.iteration}")
    breakdown.total.backward()
    opt.step()
    state.disc_mask.zero_grad(set_to_none=True)
    state.last_batch_sources = [p.source for p in pairs]
    return breakdown


def train_step(state: CycleState, real_batch: List[SamplePair], cfg: TrainConfig,
               rng: torch.Generator) -> Tuple[CycleState, LossBreakdown]:
    """D_image, D_mask, G (+ segmentation feedback), then F on the effective batch.

    The returned breakdown's total is the generator objective; discriminator and
    segmenter terms are recorded alongside.
    """
    if not real_batch:
        raise ParameterError("train_step needs a non-empty batch")
    device = next(state.gen.parameters()).device
    images, masks = pairs_to_tensors(real_batch, device=device)
    state.gen.train()

    synth = make_synthetic_batch(masks, state.gen, rng, state.iteration)
    with torch.no_grad(), frozen_statistics(state.seg):
        pred_masks = torch.sigmoid(state.seg(images)[0])

    adv_d_image = update_image_discriminator(state, images, synth.images)
    adv_d_mask = update_mask_discriminator(state, masks, pred_masks)
    gen_bd = update_generator(state, images, masks, synth.latents, cfg, rng)

    extra = {"adv_d_image": adv_d_image, "adv_d_mask": adv_d_mask}
    if cfg.seg_finetune:
        seg_bd = update_segmenter(state, effective_batch(real_batch, synth, rng), cfg)
        extra.update({f"seg_{name}": value.detach() for name, value in seg_bd.terms.items()})
        extra["seg_total"] = seg_bd.total.detach()
    breakdown = LossBreakdown(terms={**{k: v.detach() for k, v in gen_bd.terms.items()}, **extra},
                              weights=dict(gen_bd.weights))
    breakdown.check_finite(f"iteration {state.iteration}")
    state.iteration += 1
    return state, breakdown


# -------------------------------
# Training loop
# -------------------------------
EpochCallback = Callable[[int, CycleState], None]


def train_sagegan(split: DatasetSplit, seg: Union[AttentionUNet, str, Path], cfg: TrainConfig,
                  out_dir: Optional[Path] = None, history_path: Optional[Path] = None,
                  on_epoch_end: Optional[EpochCallback] = None) -> Tuple[CycleState, List[Dict[str, float]]]:
    """Run ``cfg.epochs_gan`` epochs of train_step.

    The best-validation-Dice segmenter stays reachable through ``state.best_seg()``. With
    ``out_dir`` set it is also kept in ``best_seg.ckpt`` and the full cycle state in
    ``cycle_epochNNNN.ckpt`` every ``checkpoint_every`` epochs plus ``cycle.ckpt`` at the end.
    """
    if not split.train:
        raise ParameterError("Phase-2 training needs a non-empty training set")
    if not isinstance(seg, AttentionUNet):
        seg = load_segmenter(seg, cfg.unet)
    set_seed(cfg.seed, cfg.deterministic)
    np_rng, torch_rng = make_generators(cfg.seed)
    state = init_cycle_state(seg, cfg)
    history: List[Dict[str, float]] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if cfg.epochs_gan == 0:
        logger.info("epochs_gan=0: returning the initialized cycle state")
        if out_dir is not None:
            save_cycle_state(state, out_dir / "cycle.ckpt")
            save_segmenter(state.seg, out_dir / "best_seg.ckpt")
        return state, history

    train_pairs = prepare_pairs(split.train, cfg.image_size)
    val_pairs = prepare_pairs(split.val, cfg.image_size)
    loader = make_loader(train_pairs, cfg, np_rng)

    for epoch in range(1, cfg.epochs_gan + 1):
        step_records = []
        for batch in loader:
            _, breakdown = train_step(state, batch, cfg, torch_rng)
            step_records.append(breakdown.as_dict())

        record = {"phase": "gan", "epoch": epoch, **mean_records(step_records)}
        if val_pairs:
            report = evaluate_dataset(state.seg, val_pairs, threshold=cfg.threshold)
            record["val_dice"] = report.aggregate["dice"]
            record["val_f1"] = report.aggregate["f1"]
            if record["val_dice"] > state.best_val_dice:
                state.remember_best_seg(record["val_dice"])
                if out_dir is not None:
                    save_segmenter(state.best_seg(), out_dir / "best_seg.ckpt")
        history.append(record)
        if history_path is not None:
            append_jsonl(history_path, record)
        logger.info(
            f"[gan] epoch {epoch}/{cfg.epochs_gan} G={record['total']:.4f} "
            f"D_img={record['adv_d_image']:.4f} D_mask={record['adv_d_mask']:.4f} "
            f"val_dice={record.get('val_dice', float('nan')):.4f}"
        )
        if out_dir is not None and cfg.checkpoint_every > 0 and epoch % cfg.checkpoint_every == 0:
            save_cycle_state(state, out_dir / f"cycle_epoch{epoch:04d}.ckpt")
        if on_epoch_end is not None:
            on_epoch_end(epoch, state)

    if out_dir is not None:
        save_cycle_state(state, out_dir / "cycle.ckpt")
        if not val_pairs:
            save_segmenter(state.seg, out_dir / "best_seg.ckpt")
    return state, history


# -------------------------------
# Checkpoints
# -------------------------------
def save_cycle_state(state: CycleState, path) -> Path:
    return save_checkpoint({
        "kind": "cycle",
        "model_version": CYCLE_VERSION,
        "config": {
            "gen": state.gen.config.to_dict(),
            "unet": state.seg.config.to_dict(),
            "disc_base_channels": state.disc_base_channels,
        },
        "params": {name: module_to_arrays(state.network(name)) for name in NETWORKS},
        "optimizers": {name: tree_to_numpy(opt.state_dict()) for name, opt in state.optimizers.items()},
        "iteration": state.iteration,
        "best_val_dice": state.best_val_dice,
    }, path)


def _read_cycle_record(path) -> dict:
    record = load_checkpoint(path, kind="cycle")
    if record.get("model_version") != CYCLE_VERSION:
        raise CheckpointError(f"{path}: model version {record.get('model_version')} is not {CYCLE_VERSION}")
    return record


def load_cycle_state(path, cfg: Optional[TrainConfig] = None) -> CycleState:
    """Rebuild every network and optimizer; ``cfg`` only supplies the perceptual extractor and device."""
    record = _read_cycle_record(path)
    config = record["config"]
    gen = StyleUNetGenerator(GenConfig(**config["gen"]))
    seg = AttentionUNet(UNetConfig(**config["unet"]))
    disc_image = PatchDiscriminator(1, config["disc_base_channels"])
    disc_mask = PatchDiscriminator(1, config["disc_base_channels"])
    modules = {"gen": gen, "seg": seg, "disc_image": disc_image, "disc_mask": disc_mask}
    for name, module in modules.items():
        load_arrays_into(module, record["params"][name], what=name)
    device = torch.device(cfg.device if cfg is not None else "cpu")
    for module in modules.values():
        module.to(device)
    optimizers = {name: torch.optim.Adam(module.parameters()) for name, module in modules.items()}
    for name, opt in optimizers.items():
        opt.load_state_dict(tree_to_torch(record["optimizers"][name]))
    extractor = None
    if cfg is not None and cfg.gan_weights.lambda_perc > 0:
        extractor = build_extractor(cfg.perceptual_extractor)
    return CycleState(gen=gen, seg=seg, disc_image=disc_image, disc_mask=disc_mask, optimizers=optimizers,
                      extractor=extractor, iteration=int(record["iteration"]),
                      disc_base_channels=int(config["disc_base_channels"]),
                      best_val_dice=float(record.get("best_val_dice", -1.0)))


def load_generator(path) -> StyleUNetGenerator:
    record = _read_cycle_record(path)
    gen = StyleUNetGenerator(GenConfig(**record["config"]["gen"]))
    load_arrays_into(gen, record["params"]["gen"], what="generator")
    return gen.eval()
