"""Command-line entry point.

Every training knob is both a flag and a `key=value` line in an optional
config file; flags override the file. Subcommands print a short summary to
stdout and write CSV/JSON artifacts into the run directory. Exit codes:
0 success, 2 configuration problem, 3 data problem, 4 numeric problem.
"""

import argparse
import logging
import os
import sys

from . import training
from .config import build_config
from .errors import (EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK,
                     ConfigError, DataError, NumericError)

log = logging.getLogger("avmae")

FINETUNE_DEFAULTS = {"base_lr": 1e-3, "beta2": 0.999}

# (flag, config key, type, help) for everything TrainConfig understands.
_CONFIG_FLAGS = [
    ("--seed", "seed", int, "run seed; all randomness derives from it"),
    ("--model-size", "model_size", str, "micro, tiny, small, or base"),
    ("--modalities", "modalities", str, "audio+video, audio, or video"),
    ("--task", "task", str, "classify or regress"),
    ("--num-classes", "num_classes", int, "class count for classification"),
    ("--num-dims", "num_dims", int, "output dimensions for regression"),
    ("--batch-size", "batch_size", int, "samples per optimization step"),
    ("--base-lr", "base_lr", float, "peak learning rate after warmup"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--max-steps", "max_steps", int, "hard step cap; 0 disables"),
    ("--warmup-epochs", "warmup_epochs", int, "linear warmup length"),
    ("--weight-decay", "weight_decay", float, "decoupled weight decay"),
    ("--beta1", "beta1", float, "first moment decay"),
    ("--beta2", "beta2", float, "second moment decay"),
    ("--precision", "precision", str, "double or single"),
    ("--lambda", "loss_weight", float, "contrastive loss weight"),
    ("--temperature", "temperature", float, "contrastive temperature"),
    ("--mask-ratio-video", "mask_ratio_video", float, "video mask ratio in [0,1)"),
    ("--mask-ratio-audio", "mask_ratio_audio", float, "audio mask ratio in [0,1)"),
    ("--fusion-flow", "fusion_flow", str,
     "default, raw-input, video-first, or audio-first"),
    ("--skip-map", "skip_map", str,
     "comma-separated enc:dec pairs, e.g. 4:2,7:3,10:4"),
    ("--mel-variant", "mel_variant", str, "htk or slaney mel scale"),
    ("--clip-stride", "clip_stride", int, "temporal stride between clip frames"),
    ("--log-every", "log_every", int, "CSV logging period in steps"),
    ("--checkpoint-every", "checkpoint_every", int,
     "extra checkpoint period in steps; 0 = per-epoch only"),
    ("--data-failure-limit", "data_failure_limit", int,
     "consecutive bad samples tolerated before aborting"),
    ("--early-stop-acc", "early_stop_acc", float,
     "stop fine-tuning at this training accuracy; 0 disables"),
]
_CONFIG_SWITCHES = [
    ("--no-hsp", "no_hsp", "disable encoder-to-decoder skip connections"),
    ("--no-hcmcl", "no_hcmcl", "disable the layer-wise contrastive loss"),
    ("--no-hff", "no_hff", "use only the last layer for fine-tuning features"),
    ("--patch-normalize", "patch_normalize",
     "normalize each reconstruction target patch to zero mean, unit variance"),
]


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="FILE",
                        help="key=value file; flags override it")
    for flag, dest, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)
    for flag, dest, help_text in _CONFIG_SWITCHES:
        parser.add_argument(flag, dest=dest, action="store_const", const=True,
                            default=None, help=help_text)


def _collect(args):
    keys = [d for _, d, _, _ in _CONFIG_FLAGS] + [d for _, d, _ in _CONFIG_SWITCHES]
    return {k: getattr(args, k) for k in keys}


def _config_from(args, defaults=None):
    return build_config(args.config, _collect(args), defaults=defaults)


def cmd_pretrain(args):
    cfg = _config_from(args)
    path = training.pretrain(cfg, args.manifest, args.out, resume=args.resume)
    print(f"pretraining done: {path}")
    return EXIT_OK


def cmd_finetune(args):
    cfg = _config_from(args, defaults=FINETUNE_DEFAULTS)
    path = training.finetune(cfg, args.manifest, args.out, init_from=args.init_from)
    print(f"fine-tuning done: {path}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _config_from(args)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)),
                                   "metrics.json")
    report = training.evaluate(cfg, args.manifest, args.checkpoint,
                               split=args.split, out_path=out)
    for line in report.lines():
        print(line)
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_extract_features(args):
    cfg = _config_from(args)
    path = training.extract_features(cfg, args.manifest, args.checkpoint,
                                     args.out, split=args.split)
    print(f"features written to {path}")
    return EXIT_OK


def _parse_splits(text):
    if not text:
        return None
    splits = {}
    for part in text.split(","):
        if "=" not in part:
            raise ConfigError(f"bad split {part!r}; expected name=count")
        name, _, count = part.partition("=")
        try:
            splits[name.strip()] = int(count)
        except ValueError as exc:
            raise ConfigError(f"bad split count in {part!r}") from exc
    return splits


def cmd_synth_data(args):
    cfg = _config_from(args)
    mcfg = cfg.model_config()
    manifest = training.synth_dataset_cli(
        args.out, args.clips, args.classes, cfg.seed, mcfg,
        splits=_parse_splits(args.splits),
        dump_spectrograms=args.dump_spectrogram, mel_htk=cfg.mel_htk)
    print(f"manifest written to {manifest}")
    return EXIT_OK


def cmd_grad_check(args):
    err = training.pretrain_grad_check(seed=args.seed, batch_size=args.batch_size,
                                       max_entries_per_param=args.entries)
    print(f"max relative gradient error: {err:.3e} (tolerance {args.tolerance:g})")
    if err > args.tolerance:
        raise NumericError(f"gradient check failed: {err:.3e} > {args.tolerance:g}")
    return EXIT_OK


def cmd_param_count(args):
    from .models import param_count
    cfg = _config_from(args)
    n = param_count(cfg.model_size, cfg.modalities, num_outputs=cfg.num_outputs)
    print(f"{cfg.model_size} {cfg.modalities}: {n} trainable parameters "
          f"({n / 1e6:.2f} M)")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="avmae",
        description="Masked audio-visual pretraining and fine-tuning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="masked-reconstruction pre-training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--init-from", metavar="CKPT",
                   help="initialize encoders from a pre-training checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="two-clip evaluation on one split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="metrics JSON path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract-features", help="save fused features as .npz")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output .npz path")
    p.add_argument("--split", help="restrict to one split")
    _add_config_flags(p)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("synth-data", help="generate a paired synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--splits", help="name=count pairs, e.g. train=6,test=2")
    p.add_argument("--dump-spectrogram", action="store_true",
                   help="also write one .hspc log-mel file per clip")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("grad-check",
                       help="central-difference check of the pre-training loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--entries", type=int, default=4,
                   help="checked coordinates per parameter tensor")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("param-count", help="trainable parameters of a model")
    _add_config_flags(p)
    p.set_defaults(func=cmd_param_count)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
