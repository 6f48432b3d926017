"""Command-line entry point: ``maunet {gen-synth,train,eval,predict,gradcheck}``.

Exit codes: 0 success, 1 validation/data/I-O error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_model
from .config import load_config
from .data import gen_synthetic, load_dataset, read_gray, split, write_gray
from .errors import MAUNetError, NumericalError
from .metrics import binarize
from .model import build
from .rng import RngState
from .selfcheck import BLOCKS
from .training import evaluate, train

log = logging.getLogger("maunet")


def _cmd_gen_synth(args) -> int:
    out = gen_synthetic(args.n, args.size, args.seed, args.out)
    log.info("wrote %d image/mask pairs of %dx%d to %s", args.n, args.size, args.size, out)
    return 0


def _cmd_train(args) -> int:
    model_cfg, train_cfg = load_config(args.config)
    samples = load_dataset(args.data, args.split_fraction, train_cfg.seed)
    model = build(model_cfg, RngState(train_cfg.seed))
    state = train(model, samples, train_cfg, checkpoint_path=args.out, log_path=args.log)
    log.info("best %s %.4f at epoch %s -> %s", train_cfg.monitor, state.best_metric, state.best_epoch, args.out)
    return 0


def _cmd_eval(args) -> int:
    model, train_cfg = load_model(args.ckpt)
    samples = split(load_dataset(args.data, args.split_fraction, train_cfg.seed), args.split)
    report = evaluate(model, samples, args.threshold)
    Path(args.report).write_text(report.to_csv(), encoding="utf-8", newline="\n")
    print(report)
    return 0


def _cmd_predict(args) -> int:
    model, _ = load_model(args.ckpt)
    image = read_gray(Path(args.image)).astype(model.dtype) / 255.0
    prob = model.predict(image[None, None])[0, 0]
    if args.prob:
        out = np.round(prob * 255)
    else:
        out = binarize(prob, args.threshold) * 255
    write_gray(Path(args.out), out)
    return 0


def _cmd_gradcheck(args) -> int:
    names = [args.block] if args.block else list(BLOCKS)
    ok = True
    for name in names:
        report = BLOCKS[name](args.seed)
        ok &= report.passed
        print(f"{name}: max-rel-error {report.worst:.3e} tol {report.tol:.0e} {'PASS' if report.passed else 'FAIL'}")
        if not report.passed:
            print(report, file=sys.stderr)
    return 0 if ok else 2


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maunet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic ellipse dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train", help="train with keep-best checkpointing")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="epoch log CSV")
    p.add_argument("--split-fraction", type=float, default=0.8)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--split-fraction", type=float, default=0.8)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="segment one PNG")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prob", action="store_true", help="write probabilities instead of a binary mask")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the blocks")
    p.add_argument("--block", choices=sorted(BLOCKS))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (MAUNetError, OSError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
