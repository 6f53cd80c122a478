"""Command line entry point.

Exit codes: 0 success, 1 usage error (bad arguments or config), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, RunConfig

logger = logging.getLogger("resfftgan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seeds(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resfftgan", description="Pose-transfer GAN training harness")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="run the staged training schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", default="full,no-sn,no-wass,no-both,no-fft")
    p.add_argument("--seeds", type=_seeds, default=[0])
    p.add_argument("--threshold", type=float, help="fixed convergence threshold")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="metrics CSV for a test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parsing", choices=("predicted", "target"))

    p = sub.add_parser("generate", help="repose one source image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset directory (default: the run's data)")

    p = sub.add_parser("make-data", help="write a synthetic dataset")
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-test", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    return cfg.updated(**changes) if changes else cfg


def _run(args) -> int:
    # heavy imports stay out of argument parsing
    if args.command == "train":
        from .trainer import Trainer
        if args.resume:
            overrides = {"out_dir": args.out} if args.out else {}
            trainer = Trainer.resume(args.resume, **overrides)
        else:
            trainer = Trainer(_load_config(args))
        path = trainer.run()
        print(f"checkpoint {path}")
        print(f"losses {trainer.out_dir / 'loss.csv'}")
    elif args.command == "ablate":
        from .harness import ablate, parse_variants
        cfg = _load_config(args)
        result = ablate(cfg, parse_variants(args.variants), args.seeds, cfg.out_dir, args.threshold)
        print(f"threshold {result['threshold']!r}")
        print(json.dumps(result["medians"], indent=2))
        print(f"table {Path(cfg.out_dir) / 'ablation.csv'}")
    elif args.command == "evaluate":
        from .harness import evaluate, summarize
        rows = evaluate(args.checkpoint, args.data, args.out, args.parsing)
        s = summarize(rows)
        if s is not None:
            print(f"mean psnr {s.psnr:.4f} perceptual_distance {s.perceptual_distance:.5f}")
        print(f"wrote {args.out} ({len(rows)} samples)")
    elif args.command == "generate":
        from .harness import generate
        generate(args.checkpoint, args.source, args.pose, args.out, args.data)
        print(f"wrote {args.out}")
    elif args.command == "make-data":
        from .synthdata import make_split
        if args.n_train < 0 or args.n_test < 0:
            raise UsageError("sizes must be non-negative")
        entries = make_split(args.n_train, args.n_test, args.seed, args.out, args.size)
        print(f"wrote {len(entries)} pairs to {args.out}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        return _run(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
