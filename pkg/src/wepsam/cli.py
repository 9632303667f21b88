"""Command line surface for the saliency pipeline.

Subcommands: weaklabel, filter, pretrain, finetune, predict, eval.
Exit codes are fixed for scripting: 0 ok, 1 usage, 2 empty/missing
input, 3 checkpoint mismatch, 4 numeric divergence, 5 decode failure,
6 missing evaluation counterpart.
"""

import argparse
import os
import sys

from . import gbvs, metrics, net, train, weakset
from .errors import (CheckpointError, DecodeError, MissingCounterpartError,
                     NonFiniteError)
from .imagecore import load_image, write_pgm, write_png

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_EMPTY = 2
EXIT_CHECKPOINT = 3
EXIT_DIVERGED = 4
EXIT_DECODE = 5
EXIT_MISSING = 6

_IMAGE_EXTENSIONS = (".png", ".pgm", ".ppm")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this pipeline reserves 2 for
    empty inputs, so remap usage problems to exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scan_images(directory):
    return [os.path.join(directory, name) for name in sorted(os.listdir(directory))
            if os.path.splitext(name)[1].lower() in _IMAGE_EXTENSIONS]


def cmd_weaklabel(args):
    files = _scan_images(args.images)
    if not files:
        print(f"no images found in {args.images}", file=sys.stderr)
        return EXIT_EMPTY
    os.makedirs(args.out_dir, exist_ok=True)
    records = []
    skipped = 0
    for path in files:
        image_id = os.path.splitext(os.path.basename(path))[0]
        try:
            img = load_image(path)
        except DecodeError as exc:
            print(f"skipping {path}: {exc}", file=sys.stderr)
            skipped += 1
            continue
        weak = gbvs.gbvs_saliency(img, sigma=args.sigma)
        map_path = os.path.join(args.out_dir, image_id + ".pgm")
        write_pgm(map_path, weak)
        records.append(weakset.WeakLabelRecord(
            image_id, os.path.abspath(path), os.path.abspath(map_path),
            entropy_bits=weakset.entropy(weak), split=args.split))
    if not records:
        print("no decodable images", file=sys.stderr)
        return EXIT_EMPTY
    manifest_path = os.path.join(args.out_dir, "manifest.jsonl")
    weakset.write_manifest(manifest_path, records)
    print(f"wrote {len(records)} weak labels to {args.out_dir} "
          f"({skipped} skipped), manifest {manifest_path}")
    return EXIT_OK


def cmd_filter(args):
    records = weakset.read_manifest(args.manifest)
    if any(r.entropy_bits is None for r in records):
        print("manifest has records without entropy_bits", file=sys.stderr)
        return EXIT_USAGE
    selected = weakset.select_low_entropy(records, args.k)
    weakset.write_manifest(args.out, selected)
    print(f"kept {len(selected)} of {len(records)} records "
          f"(lowest entropy first) -> {args.out}")
    return EXIT_OK


def _run_training(args, stage):
    cfg = train.TrainConfig(
        stage=stage, epochs=args.epochs, batch_size=args.batch_size,
        lr_start=args.lr_start, lr_end=args.lr_end, momentum=args.momentum,
        seed=args.seed, init=args.init)
    os.makedirs(args.out_dir, exist_ok=True)
    val = args.val_manifest if args.val_manifest else args.manifest
    _, rows = train.train_stage(args.manifest, val, cfg, out_dir=args.out_dir)
    csv_path = os.path.join(args.out_dir, "loss.csv")
    train.write_loss_csv(csv_path, rows)
    from .figures import render_loss_curves
    render_loss_curves(rows, os.path.join(args.out_dir, "loss.png"),
                       title=f"{stage} loss (seed {args.seed})")
    last = rows[-1]
    print(f"{stage}: {cfg.epochs} epochs, final train {last.train_loss:.6g} "
          f"val {last.val_loss:.6g}; checkpoint + loss.csv in {args.out_dir}")
    return EXIT_OK


def cmd_pretrain(args):
    return _run_training(args, "pretrain")


def cmd_finetune(args):
    return _run_training(args, "finetune")


def cmd_predict(args):
    params = net.load_checkpoint(args.checkpoint)
    files = _scan_images(args.images)
    if not files:
        print(f"no images found in {args.images}", file=sys.stderr)
        return EXIT_EMPTY
    os.makedirs(args.out_dir, exist_ok=True)
    for path in files:
        image_id = os.path.splitext(os.path.basename(path))[0]
        saliency = train.predict(params, load_image(path))
        out_path = os.path.join(args.out_dir, f"{image_id}.{args.format}")
        if args.format == "png":
            write_png(out_path, saliency)
        else:
            write_pgm(out_path, saliency)
    print(f"wrote {len(files)} saliency maps to {args.out_dir}")
    return EXIT_OK


def cmd_eval(args):
    report = metrics.evaluate(args.pred, args.gt, args.fix,
                              n_splits=args.splits, seed=args.seed)
    report.to_json(args.out)
    base = os.path.splitext(args.out)[0]
    report.to_csv(base + ".csv")
    from .figures import render_metric_summary
    render_metric_summary(report, base + ".png")
    summary = " ".join(f"{m}={report.aggregate[m]:.4f}"
                       for m in metrics.METRIC_NAMES)
    print(f"{len(report.per_image)} images: {summary}")
    print(f"report: {args.out} (+ .csv, .png)")
    return EXIT_OK


def _add_training_flags(sub, default_epochs, init_required):
    sub.add_argument("--manifest", required=True, help="training manifest (JSONL)")
    sub.add_argument("--val-manifest",
                     help="validation manifest; defaults to the training one")
    sub.add_argument("--epochs", type=int, default=default_epochs)
    sub.add_argument("--batch-size", type=int, default=32)
    sub.add_argument("--lr-start", type=float, default=0.3)
    sub.add_argument("--lr-end", type=float, default=1e-4)
    sub.add_argument("--momentum", type=float, default=0.9)
    sub.add_argument("--seed", type=int, default=0)
    if init_required:
        sub.add_argument("--init", required=True,
                         help="checkpoint path, or 'random' for the baseline run")
    else:
        sub.add_argument("--init", default="random",
                         help="checkpoint path or 'random' (default)")
    sub.add_argument("--out-dir", required=True)


def build_parser():
    parser = _Parser(prog="wepsam",
                     description="weakly pre-learnt saliency pipeline")
    commands = parser.add_subparsers(dest="command", required=True,
                                     parser_class=_Parser)

    sub = commands.add_parser("weaklabel",
                              help="generate 32x32 weak saliency labels")
    sub.add_argument("--images", required=True, help="directory of input images")
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--sigma", type=float, default=gbvs.DEFAULT_SIGMA,
                     help="distance falloff of the saliency chains")
    sub.add_argument("--split", default="train")
    sub.set_defaults(func=cmd_weaklabel)

    sub = commands.add_parser("filter", help="keep the k lowest-entropy labels")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--k", type=int, default=10000,
                     help="records to keep (paper-scale value: 100000)")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_filter)

    sub = commands.add_parser("pretrain", help="train on weak labels")
    _add_training_flags(sub, train.PRETRAIN_EPOCHS, init_required=False)
    sub.set_defaults(func=cmd_pretrain)

    sub = commands.add_parser("finetune", help="train on ground-truth maps")
    _add_training_flags(sub, train.FINETUNE_EPOCHS, init_required=True)
    sub.set_defaults(func=cmd_finetune)

    sub = commands.add_parser("predict", help="write full-resolution maps")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--images", required=True)
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--format", choices=("pgm", "png"), default="pgm")
    sub.set_defaults(func=cmd_predict)

    sub = commands.add_parser("eval", help="score predictions against ground truth")
    sub.add_argument("--pred", required=True, help="directory of predicted maps")
    sub.add_argument("--gt", required=True, help="directory of ground-truth maps")
    sub.add_argument("--fix", required=True, help="directory of fixation maps")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--splits", type=int, default=100,
                     help="random negative sets per image for AUC-Borji")
    sub.add_argument("--out", required=True, help="report JSON path")
    sub.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"wepsam: missing input: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except CheckpointError as exc:
        print(f"wepsam: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NonFiniteError as exc:
        print(f"wepsam: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DecodeError as exc:
        print(f"wepsam: decode error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except MissingCounterpartError as exc:
        print(f"wepsam: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as exc:
        print(f"wepsam: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
