"""
SVG line charts of RD curves.

One file per metric, one line per curve.  Each line carries ``gid`` equal to
its label so the SVG group can be located by id; text stays as text
(``svg.fonttype = none``) so files diff cleanly.
"""
from __future__ import annotations

import logging
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams.update({"svg.fonttype": "none", "svg.hashsalt": "nefic"})

import matplotlib.pyplot as plt  # noqa: E402

from src.evaluation.bdrate import METRICS, RDCurve  # noqa: E402

logger = logging.getLogger(__name__)

AXIS_LABELS = {
    "psnr": "PSNR (dB)",
    "msssim": "MS-SSIM",
    "proxy": "perceptual proxy (lower is better)",
}


def line_id(label: str) -> str:
    """SVG-safe group id for *label*."""
    return "curve-" + re.sub(r"[^A-Za-z0-9_-]+", "-", label)


def plot_curves(
    curves: list[RDCurve],
    output_dir: Path,
    *,
    metrics: tuple[str, ...] = METRICS,
    prefix: str = "rd",
) -> list[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(5.0, 3.6), constrained_layout=True)
        for curve in curves:
            pts = [p for p in curve.points if metric in p.metrics]
            if not pts:
                continue
            ax.plot(
                [p.bpp for p in pts],
                [p.metrics[metric] for p in pts],
                marker="o",
                label=curve.label,
                gid=line_id(curve.label),
            )
        ax.set_xlabel("bpp")
        ax.set_ylabel(AXIS_LABELS.get(metric, metric))
        ax.grid(True, alpha=0.3)
        ax.legend()
        path = output_dir / f"{prefix}_{metric}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        logger.info("[plot] %s", path)
        written.append(path)
    return written
