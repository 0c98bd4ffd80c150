"""
Anchor / bypass / final frame comparison.

For every decoded image three frames are scored against the source: the
anchor frame ``x_anchor``, the bypass latent decoded directly by the VAE and
the final one-step reconstruction.  They share one bitstream, so all three
sit at the same bpp; averaging per lambda gives three RD curves.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Any, Iterable

import torch

from src.evaluation.bdrate import METRICS, RDCurve, RDPoint
from src.evaluation.metrics import msssim, psnr
from src.generative.latent_backbone import LatentAutoencoder
from src.pipeline.system import Reconstruction
from src.training.losses import perceptual_proxy

FRAME_KINDS: tuple[str, ...] = ("anchor", "bypass", "final")
FRAME_COLUMNS = ["image", "lambda_id", "lambda_R", "frame", "metric", "value"]
TABLE_COLUMNS = ["lambda_id", "lambda_R", "frame", "bpp", "psnr", "msssim", "proxy"]


@torch.no_grad()
def score_frames(vae: LatentAutoencoder, x: torch.Tensor, rec: Reconstruction) -> dict[str, dict[str, float]]:
    frames = {"anchor": rec.x_anchor, "bypass": rec.x_bypass, "final": rec.x_hat}
    return {
        kind: {
            "psnr": psnr(frame, x),
            "msssim": msssim(frame, x),
            "proxy": float(perceptual_proxy(vae, frame, x)),
        }
        for kind, frame in frames.items()
    }


def frame_rows(
    image: str, lambda_id: int, lambda_r: float, scores: dict[str, dict[str, float]]
) -> list[dict[str, Any]]:
    """Long-format rows: one per (frame kind, metric)."""
    return [
        {"image": image, "lambda_id": lambda_id, "lambda_R": lambda_r,
         "frame": kind, "metric": metric, "value": scores[kind][metric]}
        for kind in FRAME_KINDS
        for metric in METRICS
    ]


def frame_comparison(
    rows: Iterable[dict[str, Any]], bpp_by_lambda: dict[int, float]
) -> list[dict[str, Any]]:
    """
    Reduce long-format frame rows to a table with exactly three rows per
    lambda (anchor, bypass, final) holding mean metrics and the mean bpp.
    """
    sums: dict[tuple[int, str], dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    lambda_r: dict[int, float] = {}
    for row in rows:
        lid = int(row["lambda_id"])
        lambda_r[lid] = float(row["lambda_R"])
        sums[(lid, row["frame"])][row["metric"]].append(float(row["value"]))

    table = []
    for lid in sorted(lambda_r):
        for kind in FRAME_KINDS:
            metrics = sums[(lid, kind)]
            table.append({
                "lambda_id": lid,
                "lambda_R": lambda_r[lid],
                "frame": kind,
                "bpp": bpp_by_lambda[lid],
                **{m: sum(metrics[m]) / len(metrics[m]) for m in METRICS},
            })
    return table


def frame_curves(table: Iterable[dict[str, Any]]) -> list[RDCurve]:
    """One RD curve per frame kind, labelled by the kind."""
    points: dict[str, list[RDPoint]] = {kind: [] for kind in FRAME_KINDS}
    for row in table:
        points[row["frame"]].append(
            RDPoint(
                bpp=float(row["bpp"]),
                metrics={m: float(row[m]) for m in METRICS},
                lambda_id=int(row["lambda_id"]),
                lambda_r=float(row["lambda_R"]),
            )
        )
    return [RDCurve(kind, pts) for kind, pts in points.items()]
