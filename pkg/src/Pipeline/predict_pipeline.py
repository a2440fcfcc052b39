# src/Pipeline/predict_pipeline.py
"""Inference-side commands: segment, evaluate, generate, visualize-attention."""
from pathlib import Path
from typing import Dict

import numpy as np
import torch

from src.components.data_ingestion import apply_split_manifest, binarize_mask, load_dataset, read_split_manifest
from src.components.data_transformation import resize_image, resize_mask
from src.components.model_trainer import prepare_pairs
from src.config import RunConfig
from src.exception import ConfigurationError, CustomException, IngestionError
from src.logger import get_logger
from src.model_training.attention_unet import attention_maps, load_segmenter, predict_mask
from src.model_training.metrics import evaluate_dataset
from src.model_training.model_trainer import load_generator
from src.model_training.style_generator import generate_image, sample_latent
from src.model_training.visualization import (
    render_attention_overlay,
    render_segmentation_triplet,
    render_synthetic_pair,
    save_overlay,
)
from src.Pipeline.train_pipeline import prepare_output, report_failure, require
from src.utils import list_images, read_grayscale, save_json, to_uint8, write_png

logger = get_logger(__name__)


def collect_inputs(path) -> Dict[str, Path]:
    """stem -> file for a single image or every image in a directory."""
    path = Path(path)
    if path.is_dir():
        files = list_images(path)
    elif path.is_file():
        files = {path.stem: path}
    else:
        raise IngestionError(f"input path not found: {path}")
    if not files:
        raise IngestionError(f"no images found in {path}")
    return files


def finish(command: str, written: int, skipped: int) -> int:
    """0 only when every requested artifact was written."""
    if skipped:
        logger.warning(f"{command}: {skipped} of {written + skipped} inputs skipped")
        print(f"{command}: {skipped} of {written + skipped} inputs could not be processed")
        return 1
    return 0


def cmd_segment(run: RunConfig) -> int:
    try:
        model = load_segmenter(require(run.checkpoint, "--checkpoint", "segment"))
        files = collect_inputs(require(run.input, "--input", "segment"))
        out = prepare_output(run)
        size = model.config.input_size
        written = skipped = 0
        for stem, path in files.items():
            try:
                image = read_grayscale(path)
            except IngestionError as e:
                logger.warning(f"skipping {path}: {e.message}")
                skipped += 1
                continue
            mask = predict_mask(torch.from_numpy(resize_image(image, size)), model, run.train.threshold)
            mask = resize_mask(mask[0, 0].numpy(), image.shape)
            write_png(out / "masks" / f"{stem}.png", (mask * 255).astype(np.uint8))
            written += 1
        logger.info(f"segment: wrote {written} masks to {out / 'masks'}")
        return finish("segment", written, skipped)
    except CustomException as e:
        return report_failure("segment", e)


def cmd_evaluate(run: RunConfig) -> int:
    try:
        model = load_segmenter(require(run.checkpoint, "--checkpoint", "evaluate"))
        data = require(run.data, "--data", "evaluate")
        manifest_path = run.manifest or (Path(run.out) / "split_manifest.txt")
        if not Path(manifest_path).exists():
            raise ConfigurationError(f"evaluate needs --manifest (no split manifest at {manifest_path})")
        split = apply_split_manifest(load_dataset(data, n_jobs=run.n_jobs), read_split_manifest(manifest_path))
        out = prepare_output(run)

        val = prepare_pairs(split.val, model.config.input_size)
        report = evaluate_dataset(model, val, threshold=run.train.threshold)
        report.config.update({"checkpoint": str(run.checkpoint), "manifest": str(manifest_path), "partition": "val"})
        save_json(out / "report.json", report.to_dict())
        report.to_frame().to_csv(out / "report.csv", index=False)
        print(f"dice={report.aggregate['dice']:.4f} f1={report.aggregate['f1']:.4f} (n={len(val)})")

        if run.figures:
            for pair in val:
                pred = predict_mask(torch.from_numpy(pair.image), model, run.train.threshold)[0, 0].numpy()
                render_segmentation_triplet(pair.image, pair.mask, pred, out / "figures" / f"{pair.id}_triplet.png",
                                            title=pair.id)
        return 0
    except CustomException as e:
        return report_failure("evaluate", e)


def cmd_generate(run: RunConfig) -> int:
    try:
        gen = load_generator(require(run.checkpoint, "--checkpoint", "generate"))
        files = collect_inputs(require(run.input, "--input", "generate"))
        out = prepare_output(run)
        rng = torch.Generator().manual_seed(run.train.seed)
        size = gen.config.input_size
        written = skipped = 0
        for stem, path in files.items():
            try:
                mask = binarize_mask(read_grayscale(path))
            except IngestionError as e:
                logger.warning(f"skipping {path}: {e.message}")
                skipped += 1
                continue
            z = sample_latent(1, gen, rng)[0]
            with torch.no_grad():
                image = generate_image(torch.from_numpy(resize_mask(mask, size)).float(), z, gen, rng)
            image = resize_image(image.numpy(), mask.shape)
            write_png(out / "synthetic" / f"{stem}.png", to_uint8(image))
            if run.figures:
                render_synthetic_pair(mask, image, out / "figures" / f"{stem}_synthetic.png", title=stem)
            written += 1
        logger.info(f"generate: wrote {written} synthetic images to {out / 'synthetic'}")
        return finish("generate", written, skipped)
    except CustomException as e:
        return report_failure("generate", e)


def cmd_visualize_attention(run: RunConfig) -> int:
    try:
        model = load_segmenter(require(run.checkpoint, "--checkpoint", "visualize-attention"))
        files = collect_inputs(require(run.input, "--input", "visualize-attention"))
        out = prepare_output(run)
        size = model.config.input_size
        written = skipped = 0
        for stem, path in files.items():
            try:
                image = resize_image(read_grayscale(path), size)
            except IngestionError as e:
                logger.warning(f"skipping {path}: {e.message}")
                skipped += 1
                continue
            maps = attention_maps(torch.from_numpy(image), model)
            overlay = render_attention_overlay(image, maps, run.layer, run.colormap, run.alpha)
            save_overlay(overlay, out / "attention" / f"{stem}_layer{run.layer}.png")
            written += 1
        return finish("visualize-attention", written, skipped)
    except CustomException as e:
        return report_failure("visualize-attention", e)
