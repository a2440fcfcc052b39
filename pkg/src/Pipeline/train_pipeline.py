# src/Pipeline/train_pipeline.py
"""train-seg and train-gan commands. Each returns a process exit status."""
import sys
from pathlib import Path
from typing import List, Tuple

import torch

from src.components.data_ingestion import (
    DataIngestion,
    DataIngestionConfig,
    DatasetSplit,
    apply_split_manifest,
    load_dataset,
    read_split_manifest,
    write_split_manifest,
)
from src.components.data_transformation import preprocess
from src.components.model_trainer import pretrain_segmenter
from src.config import RunConfig
from src.exception import ConfigurationError, CustomException
from src.logger import get_logger
from src.model_training.attention_unet import AttentionUNet, attention_maps, load_segmenter, save_segmenter
from src.model_training.model_trainer import train_sagegan
from src.model_training.visualization import (
    OverlayImage,
    plot_history,
    render_attention_evolution,
    render_attention_overlay,
    save_overlay,
)
from src.utils import save_json

logger = get_logger(__name__)

HISTORY_FILE = "history.jsonl"


def prepare_output(run: RunConfig) -> Path:
    """Create the output directory and echo the resolved configuration into it."""
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    save_json(out / "run_config.json", run.to_dict())
    return out


def report_failure(command: str, error: CustomException) -> int:
    logger.error(f"{command} failed: {error}")
    print(f"{command}: error: {error.message}", file=sys.stderr)
    return 1


def require(value, flag: str, command: str):
    if value is None:
        raise ConfigurationError(f"{command} needs {flag}")
    return value


def load_split(run: RunConfig, out: Path) -> DatasetSplit:
    """Re-apply ``--manifest`` when given, otherwise split afresh and write the manifest."""
    cfg = run.train
    if run.manifest:
        split = apply_split_manifest(load_dataset(run.data, n_jobs=run.n_jobs), read_split_manifest(run.manifest))
        write_split_manifest(split, out / "split_manifest.txt")
        return split
    ingestion = DataIngestion(DataIngestionConfig(
        root=Path(run.data), artifacts_dir=out, ratio=cfg.split_ratio, seed=cfg.seed, n_jobs=run.n_jobs,
    ))
    return ingestion.initiate_data_ingestion()


def fresh_history(out: Path) -> Path:
    path = out / HISTORY_FILE
    path.unlink(missing_ok=True)
    return path


def cmd_train_seg(run: RunConfig) -> int:
    try:
        require(run.data, "--data", "train-seg")
        out = prepare_output(run)
        cfg = run.train
        split = load_split(run, out)

        snapshots: List[Tuple[int, OverlayImage]] = []
        callback = None
        if cfg.attention_every > 0 and split.val:
            probe = preprocess(split.val[0], cfg.image_size)
            probe_tensor = torch.from_numpy(probe.image)

            def callback(epoch: int, model: AttentionUNet) -> None:
                if epoch % cfg.attention_every and epoch != cfg.epochs_pretrain:
                    return
                maps = attention_maps(probe_tensor.to(next(model.parameters()).device), model)
                overlay = render_attention_overlay(probe.image, maps, run.layer, run.colormap, run.alpha)
                save_overlay(overlay, out / "attention" / f"{probe.id}_epoch{epoch:04d}.png")
                snapshots.append((epoch, overlay))

        model, history = pretrain_segmenter(split, cfg, history_path=fresh_history(out), on_epoch_end=callback)
        save_segmenter(model, out / "segmenter.ckpt")
        if history:
            plot_history(history, out / "training_curves.png")
        if snapshots:
            render_attention_evolution(snapshots, out / "attention_evolution.png")
        logger.info(f"train-seg finished: {len(history)} epochs, artifacts in {out}")
        return 0
    except CustomException as e:
        return report_failure("train-seg", e)


def cmd_train_gan(run: RunConfig) -> int:
    try:
        seg_path = require(run.seg_checkpoint or run.checkpoint, "--seg-checkpoint", "train-gan")
        require(run.data, "--data", "train-gan")
        cfg = run.train
        seg = load_segmenter(seg_path, cfg.unet)
        out = prepare_output(run)
        split = load_split(run, out)
        state, history = train_sagegan(split, seg, cfg, out_dir=out, history_path=fresh_history(out))
        if history:
            plot_history(history, out / "training_curves.png")
        logger.info(f"train-gan finished: {len(history)} epochs, artifacts in {out}")
        return 0
    except CustomException as e:
        return report_failure("train-gan", e)
