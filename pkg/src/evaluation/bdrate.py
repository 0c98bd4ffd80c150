"""
Rate-distortion curves and the Bjøntegaard-Delta rate.

log10(bpp) is interpolated as a monotone piecewise-cubic (PCHIP) function of
quality on each curve, integrated exactly over the overlapping quality
interval, and the mean log-rate difference is reported as a percentage::

    BD = 100 * (10 ** mean(log r_test - log r_anchor) - 1)

Negative means the test curve needs fewer bits.  For the ``proxy`` metric
(lower is better) quality is taken as ``-proxy``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import isotonic_regression

from src.errors import EvaluationError

logger = logging.getLogger(__name__)

METRICS: tuple[str, ...] = ("psnr", "msssim", "proxy")
LOWER_IS_BETTER: frozenset[str] = frozenset({"proxy"})
MIN_POINTS = 4

CURVE_COLUMNS = ["label", "lambda_id", "lambda_r", "bpp", "psnr", "msssim", "proxy"]


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    metrics: dict[str, float]
    lambda_id: int | None = None
    lambda_r: float | None = None

    def quality(self, metric: str) -> float:
        if metric not in self.metrics:
            raise EvaluationError(f"RD point has no {metric!r} value")
        value = float(self.metrics[metric])
        return -value if metric in LOWER_IS_BETTER else value


@dataclass
class RDCurve:
    label: str
    points: list[RDPoint] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.points = sorted(self.points, key=lambda p: p.bpp)

    def validate(self) -> None:
        if len(self.points) < MIN_POINTS:
            raise EvaluationError(
                f"curve {self.label!r} has {len(self.points)} points; "
                f"BD-rate needs at least {MIN_POINTS}"
            )
        bpps = np.array([p.bpp for p in self.points])
        if np.any(bpps <= 0):
            raise EvaluationError(f"curve {self.label!r} has non-positive bpp")
        if np.any(np.diff(bpps) <= 0):
            raise EvaluationError(f"curve {self.label!r} bpp values are not strictly increasing")

    def scaled(self, factor: float) -> "RDCurve":
        return RDCurve(
            self.label,
            [RDPoint(p.bpp * factor, dict(p.metrics), p.lambda_id, p.lambda_r) for p in self.points],
        )


# ---------------------------------------------------------------------------
# BD-rate
# ---------------------------------------------------------------------------

def _log_rate_interpolant(curve: RDCurve, metric: str) -> tuple[PchipInterpolator, float, float]:
    curve.validate()
    log_rate = np.log10([p.bpp for p in curve.points])
    quality = np.array([p.quality(metric) for p in curve.points], dtype=np.float64)

    if np.any(np.diff(quality) <= 0):
        logger.warning(
            "[bd-rate] curve %r is not monotone in %s; applying isotonic regression",
            curve.label, metric,
        )
        quality = isotonic_regression(quality, increasing=True).x
        # collapse ties so quality is strictly increasing
        uniq, inverse = np.unique(quality, return_inverse=True)
        log_rate = np.array([log_rate[inverse == i].mean() for i in range(uniq.size)])
        quality = uniq
        if quality.size < 2:
            raise EvaluationError(
                f"curve {curve.label!r} collapses to a single quality level in {metric}"
            )
    return PchipInterpolator(quality, log_rate, extrapolate=False), quality[0], quality[-1]


def bd_rate(anchor: RDCurve, test: RDCurve, metric: str = "psnr") -> float:
    """Average bitrate difference of *test* relative to *anchor*, in percent."""
    f_anchor, lo_a, hi_a = _log_rate_interpolant(anchor, metric)
    f_test, lo_t, hi_t = _log_rate_interpolant(test, metric)
    lo, hi = max(lo_a, lo_t), min(hi_a, hi_t)
    if lo >= hi:
        raise EvaluationError(
            f"curves {anchor.label!r} and {test.label!r} share no {metric} range "
            f"([{lo_a:.4g}, {hi_a:.4g}] vs [{lo_t:.4g}, {hi_t:.4g}])"
        )
    delta = (f_test.integrate(lo, hi) - f_anchor.integrate(lo, hi)) / (hi - lo)
    return float(100.0 * (10.0 ** delta - 1.0))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_curves_csv(curves: list[RDCurve], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for curve in curves:
            for p in curve.points:
                writer.writerow({
                    "label": curve.label,
                    "lambda_id": p.lambda_id,
                    "lambda_r": p.lambda_r,
                    "bpp": p.bpp,
                    **{m: p.metrics.get(m) for m in METRICS},
                })
    return path


def read_curves_csv(path: Path) -> dict[str, RDCurve]:
    path = Path(path)
    if not path.is_file():
        raise EvaluationError(f"curve file not found: {path}")
    grouped: dict[str, list[RDPoint]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            metrics = {m: float(row[m]) for m in METRICS if row.get(m) not in (None, "")}
            grouped.setdefault(row["label"], []).append(
                RDPoint(
                    bpp=float(row["bpp"]),
                    metrics=metrics,
                    lambda_id=int(row["lambda_id"]) if row.get("lambda_id") else None,
                    lambda_r=float(row["lambda_r"]) if row.get("lambda_r") else None,
                )
            )
    if not grouped:
        raise EvaluationError(f"{path} contains no RD points")
    return {label: RDCurve(label, pts) for label, pts in grouped.items()}
