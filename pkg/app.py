# app.py
"""
Command-line entry point.

    python app.py train-seg --data ./ds --out ./run1 --epochs 200
    python app.py train-gan --data ./ds --seg-checkpoint ./run1/segmenter.ckpt --out ./run2
    python app.py segment --checkpoint ./run2/best_seg.ckpt --input ./new_images --out ./pred
    python app.py evaluate --checkpoint ./run2/best_seg.ckpt --data ./ds --manifest ./run1/split_manifest.txt
    python app.py generate --checkpoint ./run2/cycle.ckpt --input ./ds/masks --seed 7 --out ./synth
    python app.py visualize-attention --checkpoint ./run1/segmenter.ckpt --input img.png --layer 0

Configuration layering: dataclass defaults < --config JSON file < command-line flags.
"""
import argparse
import sys
from typing import Any, Dict, List, Optional

from src.config import load_run_config
from src.exception import CustomException
from src.logger import enable_console, get_logger
from src.Pipeline.predict_pipeline import cmd_evaluate, cmd_generate, cmd_segment, cmd_visualize_attention
from src.Pipeline.train_pipeline import cmd_train_gan, cmd_train_seg, report_failure

logger = get_logger(__name__)

COMMANDS = {
    "train-seg": cmd_train_seg,
    "train-gan": cmd_train_gan,
    "segment": cmd_segment,
    "evaluate": cmd_evaluate,
    "generate": cmd_generate,
    "visualize-attention": cmd_visualize_attention,
}

# which TrainConfig field --epochs sets
EPOCH_FIELDS = {"train-seg": "epochs_pretrain", "train-gan": "epochs_gan"}


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset root holding images/ and masks/")
    p.add_argument("--out", help="output directory")
    p.add_argument("--checkpoint", help="model checkpoint to read")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--image-size", type=int, nargs="+", metavar="N", help="H [W]; one value means square")
    p.add_argument("--device", help="torch device, e.g. cpu or cuda:0")
    p.add_argument("--threshold", type=float, help="probability cut for binary masks")
    p.add_argument("--n-jobs", type=int, help="parallel file loading workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Attention U-Net + style-GAN nanoparticle segmentation")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name in ("train-seg", "train-gan"):
        p = subparsers.add_parser(name, help=f"{'Phase-1 pretraining' if name == 'train-seg' else 'Phase-2 cycle training'}")
        _add_shared(p)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--manifest", help="re-use an existing split manifest")
        p.add_argument("--seg-loss", choices=("hybrid", "dice"))
    subparsers.choices["train-gan"].add_argument("--seg-checkpoint", help="Phase-1 segmenter checkpoint")
    subparsers.choices["train-gan"].add_argument("--freeze-seg", action="store_true",
                                                 help="keep the embedded segmenter fixed")
    seg_p = subparsers.choices["train-seg"]
    seg_p.add_argument("--attention-every", type=int, help="save attention overlays every N epochs")
    seg_p.add_argument("--layer", type=int, help="gate index for the attention overlays")
    seg_p.add_argument("--colormap")
    seg_p.add_argument("--alpha", type=float)

    p = subparsers.add_parser("segment", help="predict binary masks")
    _add_shared(p)
    p.add_argument("--input", required=True, help="image file or directory")

    p = subparsers.add_parser("evaluate", help="score a checkpoint on the validation partition")
    _add_shared(p)
    p.add_argument("--manifest", help="split manifest (default: <out>/split_manifest.txt)")
    p.add_argument("--figures", action="store_true", help="also write image | truth | prediction panels")

    p = subparsers.add_parser("generate", help="synthesize images from masks")
    _add_shared(p)
    p.add_argument("--input", required=True, help="mask file or directory")
    p.add_argument("--figures", action="store_true", help="also write mask | synthetic panels")

    p = subparsers.add_parser("visualize-attention", help="attention heatmap overlays")
    _add_shared(p)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--layer", type=int, help="gate index, 0 = finest")
    p.add_argument("--colormap")
    p.add_argument("--alpha", type=float)
    return parser


def args_to_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Only flags actually given end up in the override dict."""
    given = {k: v for k, v in vars(args).items() if v is not None}
    run: Dict[str, Any] = {"command": args.command}
    train: Dict[str, Any] = {}
    for key in ("data", "out", "checkpoint", "seg_checkpoint", "input", "manifest", "config",
                "layer", "colormap", "alpha", "n_jobs"):
        if key in given:
            run[key] = given[key]
    if given.get("figures"):
        run["figures"] = True
    if "seed" in given:
        train["seed"] = given["seed"]
    if "image_size" in given:
        size = given["image_size"]
        train["image_size"] = [size[0], size[0]] if len(size) == 1 else size[:2]
    for flag, field_name in (("device", "device"), ("threshold", "threshold"), ("batch_size", "batch_size"),
                             ("seg_loss", "seg_loss_mode"), ("attention_every", "attention_every")):
        if flag in given:
            train[field_name] = given[flag]
    if "epochs" in given:
        train[EPOCH_FIELDS[args.command]] = given["epochs"]
    if given.get("freeze_seg"):
        train["seg_finetune"] = False
    if train:
        run["train"] = train
    return run


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    enable_console()
    try:
        run = load_run_config(args.config, args_to_overrides(args))
    except CustomException as e:
        return report_failure(args.command, e)
    logger.info(f"running {args.command}")
    return COMMANDS[args.command](run)


if __name__ == "__main__":
    sys.exit(main())
