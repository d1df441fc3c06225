"""Command-line surface for feature extraction.

Flag style mirrors the retrieval engine's tool. Exit codes: 0 success,
1 usage error, 2 data/model error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .extract import ExtractionJob, extract
from .zoo import ZOO


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class UsageError(ValueError):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="rsextract", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="write RFT1 tensors + manifest for an image tree")
    p.add_argument("--images", required=True, help="root dir with one subdir per class")
    p.add_argument("--model", required=True,
                   help=f"zoo name ({', '.join(sorted(ZOO))}) or a model file")
    p.add_argument("--layer", required=True, help="layer alias or raw module name")
    p.add_argument("--mode", choices=["scales", "patches", "full"], default="scales")
    p.add_argument("--scales", nargs="*", type=int, default=[],
                   help="square sizes for scales mode, e.g. 300 600 1200")
    p.add_argument("--weights", choices=["pretrained", "none"], default="pretrained")
    p.add_argument("--dataset-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("finetune", help="optional: fine-tune a zoo model on an image tree")
    p.add_argument("--images", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--weights", choices=["pretrained", "none"], default="pretrained")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_finetune)

    return parser


def _cmd_extract(args) -> int:
    job = ExtractionJob(
        image_root=Path(args.images),
        model=args.model,
        layer=args.layer,
        out_dir=Path(args.out),
        dataset_id=args.dataset_id,
        mode=args.mode,
        scales=list(args.scales),
        weights=args.weights,
    )
    manifest = extract(job)
    print(f"wrote {manifest}")
    return 0


def _cmd_finetune(args) -> int:
    from .finetune import finetune

    finetune(args.images, args.model, args.out, weights=args.weights,
             epochs=args.epochs, seed=args.seed)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return int(args.func(args) or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
