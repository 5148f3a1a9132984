"""Command line: train, eval, localize, ablate, overlay, gen-data.

Flags mirror the config dataclasses one-to-one in kebab-case.  The env
var APCNN_SEED overrides --seed.  Exit codes: 0 ok, 1 usage, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .ablation import SUITES, AblationSettings, format_table, run_ablation
from .backbone import BackboneConfig
from .data import gen_synthetic, load_image_folder, save_image_folder
from .errors import ConfigError, DataError, NumericError, ShapeError
from .model import APCNN, ModelConfig, load_model, save_model
from .overlay import export_overlays
from .pyramid import PATHWAYS, AttentionConfig
from .rois import RoiConfig
from .tensor import Rng
from .train import TrainConfig, eval_localization, evaluate, forward_trace, train, write_jsonl

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _blocks(text: str) -> tuple:
    # grammar: "1x16d,2x24d" -> (num_convs, channels, downsample-if-'d')
    blocks = []
    for part in text.split(","):
        down = part.endswith("d")
        body = part[:-1] if down else part
        n, c = body.split("x")
        blocks.append((int(n), int(c), down))
    return tuple(blocks)


def add_model_args(p: argparse.ArgumentParser) -> None:
    bb = BackboneConfig()
    g = p.add_argument_group("backbone")
    g.add_argument("--input-size", type=int, default=bb.input_size)
    g.add_argument("--stem-channels", type=int, default=bb.stem_channels)
    g.add_argument("--stem-stride", type=int, default=bb.stem_stride)
    g.add_argument("--blocks", type=_blocks, default=bb.blocks, metavar="1x16d,2x24d,...")
    g.add_argument("--tap-indices", type=_ints, default=bb.tap_indices, metavar="1,2,3")
    g.add_argument("--residual", action=argparse.BooleanOptionalAction, default=bb.residual)
    at = AttentionConfig()
    g = p.add_argument_group("attention")
    g.add_argument("--use-spatial", action=argparse.BooleanOptionalAction, default=at.use_spatial)
    g.add_argument("--use-channel", action=argparse.BooleanOptionalAction, default=at.use_channel)
    g.add_argument("--pathway", choices=PATHWAYS, default=at.pathway)
    g.add_argument("--fpn-channels", type=int, default=at.fpn_channels)
    g.add_argument("--bottleneck-ratio", type=int, default=at.bottleneck_ratio)
    ro = RoiConfig()
    g = p.add_argument_group("rois")
    g.add_argument("--anchor-scales", type=_floats, default=None, metavar="14,27,55")
    g.add_argument("--xi", type=_ints, default=ro.xi, metavar="5,3,1")
    g.add_argument("--nms-iou", type=float, default=ro.nms_iou)
    mc = ModelConfig()
    g = p.add_argument_group("model")
    g.add_argument("--num-classes", type=int, default=mc.num_classes)
    g.add_argument("--drop-probs", type=_floats, default=mc.drop_probs, metavar="0.3,0.3,0")
    g.add_argument("--refinement-position", default=mc.refinement_position)
    g.add_argument("--two-stage", action=argparse.BooleanOptionalAction, default=mc.two_stage)
    g.add_argument("--use-fpn", action=argparse.BooleanOptionalAction, default=mc.use_fpn)
    g.add_argument("--use-dropblock", action=argparse.BooleanOptionalAction, default=mc.use_dropblock)
    g.add_argument("--use-zoom", action=argparse.BooleanOptionalAction, default=mc.use_zoom)
    g.add_argument("--random-drop", action=argparse.BooleanOptionalAction, default=mc.random_drop)
    g.add_argument("--random-zoom", action=argparse.BooleanOptionalAction, default=mc.random_zoom)


def add_train_args(p: argparse.ArgumentParser, epochs_default=30) -> None:
    tc = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=epochs_default)
    g.add_argument("--batch-size", type=int, default=tc.batch_size)
    g.add_argument("--lr0", type=float, default=tc.lr0)
    g.add_argument("--momentum", type=float, default=tc.momentum)
    g.add_argument("--seed", type=int, default=tc.seed)
    g.add_argument("--eval-every", type=int, default=tc.eval_every)


def add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data-dir", type=Path, default=None, help="folder with train/ and test/ class dirs")
    g.add_argument("--train-per-class", type=int, default=32)
    g.add_argument("--test-per-class", type=int, default=16)
    g.add_argument("--patch-frac", type=float, default=64.0 / 448.0)
    g.add_argument("--distractors", type=int, default=3)
    g.add_argument("--patch-jitter", type=float, default=0.0)


def build_model_config(args) -> ModelConfig:
    return ModelConfig(
        backbone=BackboneConfig(
            input_size=args.input_size,
            stem_channels=args.stem_channels,
            stem_stride=args.stem_stride,
            blocks=args.blocks,
            tap_indices=args.tap_indices,
            residual=args.residual,
        ),
        attention=AttentionConfig(
            use_spatial=args.use_spatial,
            use_channel=args.use_channel,
            pathway=args.pathway,
            fpn_channels=args.fpn_channels,
            bottleneck_ratio=args.bottleneck_ratio,
        ),
        roi=RoiConfig(anchor_scales=args.anchor_scales, xi=args.xi, nms_iou=args.nms_iou),
        num_classes=args.num_classes,
        drop_probs=args.drop_probs,
        refinement_position=args.refinement_position,
        two_stage=args.two_stage,
        use_fpn=args.use_fpn,
        use_dropblock=args.use_dropblock,
        use_zoom=args.use_zoom,
        random_drop=args.random_drop,
        random_zoom=args.random_zoom,
    )


def load_datasets(args, size: int, num_classes: int, seed: int):
    if args.data_dir is not None:
        train_ds = load_image_folder(args.data_dir / "train", size=size, split="train")
        test_dir = args.data_dir / "test"
        test_ds = load_image_folder(test_dir, size=size, split="test") if test_dir.is_dir() else None
        return train_ds, test_ds
    rng = Rng(seed)
    train_ds = gen_synthetic(
        num_classes, args.train_per_class, size, rng.derive(1), "train",
        args.patch_frac, args.distractors, args.patch_jitter
    )
    test_ds = gen_synthetic(
        num_classes, args.test_per_class, size, rng.derive(2), "test",
        args.patch_frac, args.distractors, args.patch_jitter
    )
    return train_ds, test_ds


def eval_dataset(args, size: int, num_classes: int, seed: int):
    if args.data_dir is not None:
        root = args.data_dir
        sub = root / "test"
        return load_image_folder(sub if sub.is_dir() else root, size=size, split="test")
    return gen_synthetic(
        num_classes, args.test_per_class, size, Rng(seed).derive(2), "test",
        args.patch_frac, args.distractors, args.patch_jitter
    )


# -- subcommands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    ds = gen_synthetic(
        args.num_classes,
        args.images_per_class,
        args.size,
        Rng(args.seed),
        split="train",
        patch_frac=args.patch_frac,
        distractors=args.distractors,
        patch_jitter=args.patch_jitter,
    )
    save_image_folder(ds, args.out_dir)
    print(f"wrote {len(ds)} images, {ds.num_classes} classes, to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_model_config(args)
    train_ds, test_ds = load_datasets(args, cfg.backbone.input_size, cfg.num_classes, args.seed)
    if train_ds.num_classes != cfg.num_classes:
        raise ConfigError(f"--num-classes {cfg.num_classes} but dataset has {train_ds.num_classes}")
    model = APCNN(cfg, Rng(args.seed))
    tc = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr0=args.lr0,
        momentum=args.momentum,
        seed=args.seed,
        eval_every=args.eval_every,
    )
    history = train(model, train_ds, tc, eval_ds=test_ds, out_dir=args.out_dir, log=print)
    write_jsonl(Path(args.out_dir) / "metrics.jsonl", history)
    final = history[-1]
    print(f"final train_acc {final['train_acc']:.3f} eval_acc {final['eval_acc']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    ds = eval_dataset(args, model.cfg.backbone.input_size, model.cfg.num_classes, args.seed)
    acc = evaluate(model, ds, args.batch_size)
    if args.out is not None:
        write_jsonl(args.out, forward_trace(model, ds, args.batch_size))
    print(f"accuracy {acc:.4f} on {len(ds)} images")
    return EXIT_OK


def cmd_localize(args) -> int:
    model = load_model(args.checkpoint)
    ds = eval_dataset(args, model.cfg.backbone.input_size, model.cfg.num_classes, args.seed)
    res = eval_localization(model, ds, args.batch_size)
    print(f"mIoU {res['miou']:.4f} recall {res['recall']:.4f} (skipped {res['skipped']} without GT)")
    return EXIT_OK


def cmd_ablate(args) -> int:
    settings = AblationSettings(
        num_classes=args.num_classes,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        size=args.input_size,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr0=args.lr0,
        momentum=args.momentum,
        seed=args.seed,
        fpn_channels=args.fpn_channels,
        patch_frac=args.patch_frac,
        distractors=args.distractors,
        patch_jitter=args.patch_jitter,
    )
    rows = run_ablation(args.suite, settings, log=print)
    table = format_table(rows)
    print(table, end="")
    if args.out_dir is not None:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.suite}.tsv").write_text(table)
        write_jsonl(out / f"{args.suite}.jsonl", rows)
    return EXIT_OK


def cmd_overlay(args) -> int:
    model = load_model(args.checkpoint)
    ds = eval_dataset(args, model.cfg.backbone.input_size, model.cfg.num_classes, args.seed)
    trace = export_overlays(model, ds, args.out_dir, args.batch_size, limit=args.limit)
    print(f"overlays and trace written under {args.out_dir} ({trace.name})")
    return EXIT_OK


def make_parser() -> Parser:
    p = Parser(prog="apcnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[], help="write a synthetic PPM dataset")
    g.add_argument("--out-dir", type=Path, required=True)
    g.add_argument("--num-classes", type=int, default=8)
    g.add_argument("--images-per-class", type=int, default=32)
    g.add_argument("--size", type=int, default=96)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--patch-frac", type=float, default=64.0 / 448.0)
    g.add_argument("--distractors", type=int, default=3)
    g.add_argument("--patch-jitter", type=float, default=0.0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    add_model_args(t)
    add_train_args(t)
    add_data_args(t)
    t.add_argument("--out-dir", type=Path, required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--out", type=Path, default=None, help="write per-image trace JSONL")
    e.add_argument("--batch-size", type=int, default=16)
    e.add_argument("--seed", type=int, default=0)
    add_data_args(e)
    e.set_defaults(func=cmd_eval)

    l = sub.add_parser("localize", help="mIoU/recall of the merged rectangle vs GT boxes")
    l.add_argument("--checkpoint", type=Path, required=True)
    l.add_argument("--batch-size", type=int, default=16)
    l.add_argument("--seed", type=int, default=0)
    add_data_args(l)
    l.set_defaults(func=cmd_localize)

    a = sub.add_parser("ablate", help="run an ablation suite")
    a.add_argument("--suite", choices=SUITES, required=True)
    a.add_argument("--out-dir", type=Path, default=None)
    a.add_argument("--num-classes", type=int, default=8)
    a.add_argument("--input-size", type=int, default=96)
    a.add_argument("--fpn-channels", type=int, default=128)
    add_train_args(a)
    add_data_args(a)
    a.set_defaults(func=cmd_ablate)

    o = sub.add_parser("overlay", help="export ROI overlays and trace")
    o.add_argument("--checkpoint", type=Path, required=True)
    o.add_argument("--out-dir", type=Path, required=True)
    o.add_argument("--limit", type=int, default=None)
    o.add_argument("--batch-size", type=int, default=16)
    o.add_argument("--seed", type=int, default=0)
    add_data_args(o)
    o.set_defaults(func=cmd_overlay)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if "APCNN_SEED" in os.environ and hasattr(args, "seed"):
            args.seed = int(os.environ["APCNN_SEED"])
        return args.func(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except ConfigError as e:
        print(f"apcnn: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"apcnn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ShapeError, ValueError) as e:
        print(f"apcnn: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
