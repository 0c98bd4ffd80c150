"""
Command-line surface::

    nefic train {vae,backbone,stage1,stage2} --config run.toml [--lambda-id N] [--dry-run]
    nefic compress IMAGE --checkpoint CKPT --lambda-id N -o OUT.nfic
    nefic decompress IN.nfic --checkpoint CKPT -o OUT.png [--emit-anchor P] [--emit-bypass P] [--multistep N]
    nefic eval --images DIR --checkpoint-dir DIR -o OUTDIR [--stage stage2] [--lambda-ids 0 1 ...]
    nefic bdrate ANCHOR.csv TEST.csv [--metric psnr]
    nefic plot CURVES.csv [...] -o OUTDIR [--frames FRAME_CURVES.csv]

Exit codes: 2 unreadable image, 3 missing checkpoint or prerequisite stage,
4 bad lambda_id, 5 bitstream parse/decode failure, 6 invalid configuration,
1 any other codec error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

from src.codec.container import parse, serialize
from src.config import load_run_config, settings
from src.errors import (
    CheckpointError,
    ConfigurationError,
    DecodeError,
    DependencyError,
    ImageReadError,
    LambdaIdError,
    NeficError,
    ParseError,
)
from src.evaluation.bdrate import METRICS, RDCurve, bd_rate, read_curves_csv
from src.evaluation.harness import evaluate_ladder
from src.evaluation.plots import plot_curves
from src.pipeline.checkpoint import STAGES, checkpoint_path, load_system
from src.pipeline.image_io import center_crop_to_multiple, load_image, save_image
from src.training.stages import count_trainable, run_stage

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IMAGE = 2
EXIT_CHECKPOINT = 3
EXIT_LAMBDA = 4
EXIT_BITSTREAM = 5
EXIT_CONFIG = 6

_EXIT_CODES: tuple[tuple[type[BaseException], int], ...] = (
    (ImageReadError, EXIT_IMAGE),
    (CheckpointError, EXIT_CHECKPOINT),
    (DependencyError, EXIT_CHECKPOINT),
    (LambdaIdError, EXIT_LAMBDA),
    (ParseError, EXIT_BITSTREAM),
    (DecodeError, EXIT_BITSTREAM),
    (ConfigurationError, EXIT_CONFIG),
)


def exit_code_for(exc: BaseException) -> int:
    for kind, code in _EXIT_CODES:
        if isinstance(exc, kind):
            return code
    return EXIT_FAILURE


def configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    overrides = {"loss": {"lambda_id": args.lambda_id}} if args.lambda_id is not None else None
    config = load_run_config(args.config, overrides)
    if args.dry_run:
        print(json.dumps(config.to_echo(), indent=2))
        print(f"trainable parameters ({args.stage}): {count_trainable(args.stage, config)}")
        return EXIT_OK
    result = run_stage(args.stage, config)
    print(f"{result.stage}: {result.step} steps -> {result.checkpoint}")
    print(f"metrics: {result.metrics_csv}")
    return EXIT_OK


def cmd_compress(args: argparse.Namespace) -> int:
    x = load_image(args.image)
    system, ckpt = load_system(args.checkpoint)
    ladder = ckpt.run_config().loss.ladder
    if not 0 <= args.lambda_id < len(ladder):
        raise LambdaIdError(f"lambda_id {args.lambda_id} outside the {len(ladder)}-step ladder")
    if ckpt.lambda_id is not None and ckpt.lambda_id != args.lambda_id:
        raise LambdaIdError(
            f"checkpoint {args.checkpoint} was trained for lambda_id {ckpt.lambda_id}, "
            f"not {args.lambda_id}"
        )
    system = system.to(settings.device)
    x = center_crop_to_multiple(x, 64, name=str(args.image)).to(settings.device)
    data = serialize(system.compress(x, args.lambda_id))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    bpp = 8.0 * len(data) / (x.shape[-2] * x.shape[-1])
    print(f"{out}: {len(data)} bytes, {bpp:.4f} bpp")
    return EXIT_OK


def cmd_decompress(args: argparse.Namespace) -> int:
    try:
        data = Path(args.bitstream).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {args.bitstream}: {exc}") from exc
    container = parse(data)
    system, ckpt = load_system(args.checkpoint)
    if ckpt.lambda_id is not None and ckpt.lambda_id != container.lambda_id:
        logger.warning(
            "[codec] bitstream lambda_id=%d but checkpoint was trained for %d",
            container.lambda_id, ckpt.lambda_id,
        )
    system = system.to(settings.device)
    rec = system.decompress(container, multistep=args.multistep, noise_seed=args.noise_seed)
    save_image(rec.x_hat, args.output)
    print(f"{args.output}: {container.width}x{container.height}")
    if args.emit_anchor:
        save_image(rec.x_anchor, args.emit_anchor)
    if args.emit_bypass:
        save_image(rec.x_bypass, args.emit_bypass)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt_dir = Path(args.checkpoint_dir)
    ids = args.lambda_ids if args.lambda_ids is not None else range(256)
    checkpoints = {
        i: checkpoint_path(ckpt_dir, args.stage, i)
        for i in ids
        if checkpoint_path(ckpt_dir, args.stage, i).is_file()
    }
    if args.lambda_ids is not None and len(checkpoints) != len(args.lambda_ids):
        missing = sorted(set(args.lambda_ids) - set(checkpoints))
        raise CheckpointError(f"no {args.stage} checkpoint for lambda_id(s) {missing} in {ckpt_dir}")
    if not checkpoints:
        raise CheckpointError(f"no {args.stage} checkpoints in {ckpt_dir}")
    result = evaluate_ladder(
        checkpoints, args.images, args.output,
        multistep=args.multistep, noise_seed=args.noise_seed,
    )
    for name, path in result.paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_bdrate(args: argparse.Namespace) -> int:
    anchor = _single_curve(args.anchor, args.anchor_label)
    test = _single_curve(args.test, args.test_label)
    print(f"{bd_rate(anchor, test, args.metric):.2f}%")
    return EXIT_OK


def _single_curve(path: Path, label: str | None) -> RDCurve:
    curves = read_curves_csv(path)
    if label is None:
        if len(curves) != 1:
            raise ConfigurationError(
                f"{path} holds curves {sorted(curves)}; pick one with a --*-label option"
            )
        return next(iter(curves.values()))
    if label not in curves:
        raise ConfigurationError(f"{path} has no curve labelled {label!r}")
    return curves[label]


def cmd_plot(args: argparse.Namespace) -> int:
    curves = [c for path in args.curves for c in read_curves_csv(path).values()]
    written = plot_curves(curves, args.output)
    if args.frames:
        written += plot_curves(list(read_curves_csv(args.frames).values()), args.output, prefix="frames")
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nefic", description="Next-frame generative image codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--lambda-id", type=int, default=None)
    p.add_argument("--dry-run", action="store_true", help="validate config and print the trainable count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="image -> .nfic")
    p.add_argument("image", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--lambda-id", type=int, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help=".nfic -> PNG")
    p.add_argument("bitstream", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--emit-anchor", type=Path, default=None)
    p.add_argument("--emit-bypass", type=Path, default=None)
    p.add_argument("--multistep", type=int, default=0, help="N-step sampling instead of one-step")
    p.add_argument("--noise-seed", type=int, default=0)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="RD sweep over a directory of images")
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--checkpoint-dir", type=Path, required=True)
    p.add_argument("--stage", choices=("stage1", "stage2"), default="stage2")
    p.add_argument("--lambda-ids", type=int, nargs="+", default=None)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--multistep", type=int, default=0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", help="BD-rate of TEST against ANCHOR")
    p.add_argument("anchor", type=Path)
    p.add_argument("test", type=Path)
    p.add_argument("--metric", choices=METRICS, default="psnr")
    p.add_argument("--anchor-label", default=None)
    p.add_argument("--test-label", default=None)
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("plot", help="SVG RD charts")
    p.add_argument("curves", type=Path, nargs="+")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--frames", type=Path, default=None, help="frame_curves.csv from eval")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    handler: Callable[[argparse.Namespace], int] = args.func
    try:
        return handler(args)
    except NeficError as exc:
        code = exit_code_for(exc)
        logger.error("%s (exit %d)", exc, code)
        return code


if __name__ == "__main__":
    sys.exit(main())
