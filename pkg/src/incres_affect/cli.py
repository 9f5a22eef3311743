"""Command-line entry point: ``incres-affect {synth,train,eval,predict,histogram}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .data import load_dataset, split_by_subject, synth_generate, write_dataset
from .errors import AffectError, MalformedAnnotation
from .metrics import histogram2d
from .nets import ArchConfig, Variant, build_network, load_config
from .tensor import Rng
from .training import (TrainConfig, evaluate_network, load_checkpoint,
                       network_from_checkpoint, save_checkpoint, train)

log = logging.getLogger("incres_affect")

PRED_HEADER = ("video_id", "frame_index", "valence", "arousal")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _fraction(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _open_fraction(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="incres-affect", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--subjects", type=_positive_int, default=20)
    p.add_argument("--frames", type=_positive_int, default=200)
    p.add_argument("--center-bias", type=_fraction, default=0.6)
    p.add_argument("--seed", type=_seed, default=0)

    p = sub.add_parser("train", help="train one of the three networks")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--config", type=Path, help="architecture key = value file")
    p.add_argument("--out", required=True, type=Path, help="checkpoint path")
    p.add_argument("--steps", type=_positive_int, default=1000)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=0.0001)
    p.add_argument("--eval-every", type=_positive_int, default=100)
    p.add_argument("--target-rmse", type=float)
    p.add_argument("--val-fraction", type=_open_fraction, default=0.1)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--report", type=Path, help="where to write the best validation report "
                   "(default: <out>.report.txt)")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="report path")
    p.add_argument("--split", choices=["all", "train", "validation"], default="all")
    p.add_argument("--val-fraction", type=_open_fraction, default=0.1)
    p.add_argument("--seed", type=_seed, default=0, help="split seed (match train)")
    p.add_argument("--bins", type=_positive_int, default=20)
    p.add_argument("--histogram-out", type=Path)

    p = sub.add_parser("predict", help="write per-frame predictions")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("histogram", help="2-D valence/arousal histogram of a predictions CSV")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--bins", type=_positive_int, default=20)
    p.add_argument("--out", required=True, type=Path)
    return parser


def _select(frames, which, fraction, seed):
    if which == "all":
        return frames
    split = split_by_subject(frames, fraction, Rng(seed))
    return split.train if which == "train" else split.validation


def cmd_synth(args):
    frames = synth_generate(args.subjects, args.frames, args.center_bias, Rng(args.seed))
    ann = write_dataset(frames, args.out)
    log.info("wrote %d frames to %s", len(frames), ann)


def cmd_train(args):
    frames = load_dataset(args.data)
    split = split_by_subject(frames, args.val_fraction, Rng(args.seed))
    if args.config is not None:
        arch = load_config(args.config, variant=args.variant)
    else:
        arch = ArchConfig(variant=args.variant or Variant.DEEP)
    net = build_network(config=arch)
    log.info("variant %s, %d trainable parameters, dense input width %d",
             net.variant.value, sum(t.size for t in net.named_parameters().values()), net.feature_width())
    if net.variant is Variant.LSTM:
        log.info("lstm head: %d hidden units per direction, concatenated feature width %d",
                 arch.lstm_hidden, net.feature_width())
    log.info("train frames %d (%d subjects), validation frames %d (%d subjects)",
             len(split.train), len(split.subjects("train")),
             len(split.validation), len(split.subjects("validation")))
    config = TrainConfig(learning_rate=args.lr, weight_decay=args.weight_decay,
                         batch_size=args.batch_size, max_steps=args.steps, seed=args.seed,
                         eval_every=args.eval_every, target_rmse=args.target_rmse)
    result = train(net, split, config)
    save_checkpoint(args.out, result.checkpoint)
    log.info("saved checkpoint from step %d to %s", result.checkpoint.step, args.out)
    if result.best is not None:
        report_path = args.report or args.out.with_name(args.out.name + ".report.txt")
        report_path.write_text(result.best.report.to_text(), encoding="utf-8")
        log.info("best validation report written to %s", report_path)


def _load_net(path):
    if not Path(path).is_file():
        raise AffectError(f"checkpoint not found: {path}")
    return network_from_checkpoint(load_checkpoint(path))


def cmd_eval(args):
    net = _load_net(args.ckpt)
    frames = _select(load_dataset(args.data), args.split, args.val_fraction, args.seed)
    report, _ = evaluate_network(net, frames, bins=args.bins)
    args.out.write_text(report.to_text(), encoding="utf-8")
    for key, value in report.headline().items():
        log.info("%s: %s", key, value)
    if args.histogram_out is not None:
        _write_matrix(args.histogram_out, report.histogram)


def cmd_predict(args):
    net = _load_net(args.ckpt)
    frames = load_dataset(args.data)
    images = np.stack([f.image for f in frames]) if frames else np.zeros((0, 49, 49, 3))
    pred = net.predict(images, clamp=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PRED_HEADER)
        for f, (v, a) in zip(frames, pred):
            writer.writerow([f.video_id, f.frame_index, repr(float(v)), repr(float(a))])
    log.info("wrote %d predictions to %s", len(frames), args.out)


def read_predictions(path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PRED_HEADER:
            raise MalformedAnnotation(f"{path}: header must be {','.join(PRED_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[2]), float(row[3])))
            except (IndexError, ValueError):
                raise MalformedAnnotation(f"{path} row {row_no}: expected numeric valence,arousal") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def _write_matrix(path, counts):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in counts:
            writer.writerow([int(c) for c in row])


def cmd_histogram(args):
    pred = read_predictions(args.pred)
    counts = histogram2d(pred[:, 0], pred[:, 1], args.bins)
    _write_matrix(args.out, counts)
    log.info("histogram of %d predictions written to %s", int(counts.sum()), args.out)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "histogram": cmd_histogram,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.verb](args)
    except (AffectError, OSError, ValueError) as exc:
        print(f"incres-affect {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
