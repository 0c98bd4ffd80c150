"""
Dataset evaluation across the lambda ladder.

For each checkpoint (one per ``lambda_id``) every image is centre-cropped
to a multiple of 64, compressed to real bytes, parsed back, decompressed
and scored.  Outputs, all under one directory:

  eval_images.csv   one row per (image, lambda): actual bpp, metrics, timings
  eval_frames.csv   long format: (image, lambda, frame kind, metric, value)
  curves.csv        mean RD point per lambda for the final reconstruction
  frame_curves.csv  the anchor / bypass / final curves
  runtime.csv       encode / decode avg, p50, p95 per lambda
  report_eval_*.json  envelope with the config echo of every checkpoint

Images are processed in sorted order and lambdas ascending; for fixed
checkpoints every column except the ``*_ms`` timings is reproducible.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch

from src.codec.container import parse, serialize
from src.evaluation.bdrate import METRICS, RDCurve, RDPoint, write_curves_csv
from src.evaluation.frame_comparison import (
    FRAME_COLUMNS,
    frame_comparison,
    frame_curves,
    frame_rows,
    score_frames,
)
from src.pipeline.checkpoint import load_system
from src.pipeline.image_io import center_crop_to_multiple, list_images, load_image
from src.telemetry.metrics import TimingCollector
from src.telemetry.reporter import RunReporter, write_rows
from src.telemetry.timings import time_block

logger = logging.getLogger(__name__)

IMAGE_COLUMNS = [
    "image", "lambda_id", "lambda_R", "bytes", "bpp",
    "psnr", "msssim", "proxy", "encode_ms", "decode_ms",
]
RUNTIME_COLUMNS = [
    "lambda_id", "lambda_R", "images",
    "encode_avg_ms", "encode_p50_ms", "encode_p95_ms",
    "decode_avg_ms", "decode_p50_ms", "decode_p95_ms",
]
CURVE_LABEL = "nefic"


@dataclass
class EvalResult:
    image_rows: list[dict[str, Any]] = field(default_factory=list)
    frame_rows: list[dict[str, Any]] = field(default_factory=list)
    frame_table: list[dict[str, Any]] = field(default_factory=list)
    runtime_rows: list[dict[str, Any]] = field(default_factory=list)
    curve: RDCurve | None = None
    paths: dict[str, Path] = field(default_factory=dict)


def _runtime_row(lambda_id: int, lambda_r: float, n: int, collector: TimingCollector) -> dict[str, Any]:
    enc = collector.summary(f"encode_l{lambda_id}")
    dec = collector.summary(f"decode_l{lambda_id}")
    return {
        "lambda_id": lambda_id, "lambda_R": lambda_r, "images": n,
        "encode_avg_ms": enc["avg_ms"], "encode_p50_ms": enc["median_ms"], "encode_p95_ms": enc["p95_ms"],
        "decode_avg_ms": dec["avg_ms"], "decode_p50_ms": dec["median_ms"], "decode_p95_ms": dec["p95_ms"],
    }


@torch.no_grad()
def evaluate_ladder(
    checkpoints: dict[int, Path],
    image_dir: Path,
    output_dir: Path,
    *,
    multistep: int = 0,
    noise_seed: int = 0,
) -> EvalResult:
    """Evaluate one checkpoint per lambda_id on every image in *image_dir*."""
    paths = list_images(image_dir)
    images = [
        (p.name, center_crop_to_multiple(load_image(p), 64, name=p.name)) for p in paths
    ]
    if not images:
        logger.warning("[eval] no images found in %s", image_dir)

    collector = TimingCollector()
    result = EvalResult()
    points: list[RDPoint] = []
    bpp_by_lambda: dict[int, float] = {}
    configs: dict[str, Any] = {}

    for lambda_id in sorted(checkpoints):
        system, ckpt = load_system(checkpoints[lambda_id])
        config = ckpt.run_config()
        configs[f"l{lambda_id}"] = config.to_echo()
        if ckpt.lambda_id is not None and ckpt.lambda_id != lambda_id:
            logger.warning(
                "[eval] checkpoint %s was trained for lambda_id=%s, evaluated as %d",
                checkpoints[lambda_id], ckpt.lambda_id, lambda_id,
            )
        lambda_r = config.loss.ladder[lambda_id]
        device = next(system.parameters()).device
        rows_l: list[dict[str, Any]] = []

        for name, x in images:
            x = x.to(device)
            with time_block(f"encode_l{lambda_id}", collector) as t_enc:
                data = serialize(system.compress(x, lambda_id))
            with time_block(f"decode_l{lambda_id}", collector) as t_dec:
                rec = system.decompress(parse(data), multistep=multistep, noise_seed=noise_seed)
            scores = score_frames(system.vae, x, rec)
            num_pixels = x.shape[-2] * x.shape[-1]
            row = {
                "image": name, "lambda_id": lambda_id, "lambda_R": lambda_r,
                "bytes": len(data), "bpp": 8.0 * len(data) / num_pixels,
                **scores["final"],
                "encode_ms": round(t_enc.elapsed_ms, 3), "decode_ms": round(t_dec.elapsed_ms, 3),
            }
            rows_l.append(row)
            result.frame_rows.extend(frame_rows(name, lambda_id, lambda_r, scores))
            logger.debug("[eval] %s l%d bpp=%.4f psnr=%.2f", name, lambda_id, row["bpp"], row["psnr"])

        result.image_rows.extend(rows_l)
        if rows_l:
            n = len(rows_l)
            mean_bpp = sum(r["bpp"] for r in rows_l) / n
            bpp_by_lambda[lambda_id] = mean_bpp
            points.append(RDPoint(
                bpp=mean_bpp,
                metrics={m: sum(r[m] for r in rows_l) / n for m in METRICS},
                lambda_id=lambda_id,
                lambda_r=lambda_r,
            ))
            result.runtime_rows.append(_runtime_row(lambda_id, lambda_r, n, collector))
            logger.info(
                "[eval] lambda_id=%d: %d image(s), mean bpp=%.4f", lambda_id, n, mean_bpp,
            )

    result.curve = RDCurve(CURVE_LABEL, points)
    result.frame_table = frame_comparison(result.frame_rows, bpp_by_lambda)

    output_dir = Path(output_dir)
    result.paths = {
        "images": write_rows(output_dir / "eval_images.csv", result.image_rows, IMAGE_COLUMNS),
        "frames": write_rows(output_dir / "eval_frames.csv", result.frame_rows, FRAME_COLUMNS),
        "curves": write_curves_csv([result.curve], output_dir / "curves.csv"),
        "frame_curves": write_curves_csv(frame_curves(result.frame_table), output_dir / "frame_curves.csv"),
        "runtime": write_rows(output_dir / "runtime.csv", result.runtime_rows, RUNTIME_COLUMNS),
    }
    reporter = RunReporter(CURVE_LABEL, stage="eval", config=configs,
                           collector=collector, output_dir=output_dir)
    result.paths.update(reporter.write_report(result.image_rows))
    return result
