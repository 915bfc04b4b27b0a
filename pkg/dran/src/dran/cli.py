"""Command line: synthesize a toy dataset, train, export gradient fields."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import synthesize_images
from .export import export_gradients
from .fileio import write_image
from .model import DranConfig
from .train import train


def cmd_make_dataset(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(synthesize_images(args.count, args.size, args.seed)):
        write_image(img, out / f"scene_{i:03d}.pgm")
    print(f"wrote {args.count} images to {out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    config = DranConfig(
        scale=args.scale,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    checkpoint = train(args.data, config, args.out)
    curve = checkpoint["val_curve"]
    print(
        f"validation loss {curve[0]:.4f} -> {curve[-1]:.4f} "
        f"over {args.epochs} epochs",
        file=sys.stderr,
    )
    return 0


def cmd_export(args) -> int:
    export_gradients(args.checkpoint, args.input, args.out, scale=args.scale)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dran")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="synthesize training images")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train the gradient-mapping network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="write a GRDF gradient field")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=None)
    p.set_defaults(func=cmd_export)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
