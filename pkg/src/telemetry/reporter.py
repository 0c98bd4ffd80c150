"""
Run reporter.

Writes one JSON envelope per run plus an optional CSV of result rows::

    {"run_id", "name", "stage", "generated_at", "config": <resolved RunConfig>,
     "results": [...], "timings": [...per-name summaries..., __AGGREGATE__]}

Every training and evaluation command embeds its resolved configuration so
the artifacts are self-describing.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path
from typing import Any, Sequence

from src.config import settings
from src.telemetry.metrics import TimingCollector

logger = logging.getLogger(__name__)

TIMING_COLUMNS = [
    "name", "count", "failures",
    "avg_ms", "median_ms", "max_ms", "p90_ms", "p95_ms", "p99_ms",
]


class RunReporter:
    """Serialises results, timings and the config echo to disk."""

    def __init__(
        self,
        name: str,
        *,
        stage: str,
        config: dict[str, Any] | None = None,
        collector: TimingCollector | None = None,
        output_dir: Path | None = None,
        run_id: str | None = None,
    ) -> None:
        self.name = name
        self.stage = stage
        self.config = config or {}
        self.collector = collector or TimingCollector()
        self.output_dir = Path(output_dir or settings.artifacts_dir)
        self.run_id = run_id or time.strftime("%Y%m%d_%H%M%S")

    def timing_rows(self) -> list[dict[str, Any]]:
        rows = self.collector.all_summaries()
        rows.append(self.collector.aggregate_summary())
        return rows

    def envelope(self, results: Sequence[dict[str, Any]] = ()) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "name": self.name,
            "stage": self.stage,
            "generated_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "config": self.config,
            "results": list(results),
            "timings": self.timing_rows(),
        }

    def write_report(
        self,
        results: Sequence[dict[str, Any]] = (),
        *,
        csv_columns: Sequence[str] | None = None,
    ) -> dict[str, Path]:
        """Write the JSON envelope and, with *csv_columns*, a CSV of *results*."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        stem = f"report_{self.stage}_{self.run_id}"
        paths: dict[str, Path] = {}

        json_path = self.output_dir / f"{stem}.json"
        json_path.write_text(json.dumps(self.envelope(results), indent=2), encoding="utf-8")
        logger.info("Report written: %s", json_path)
        paths["json"] = json_path

        if csv_columns:
            csv_path = self.output_dir / f"{stem}.csv"
            write_rows(csv_path, results, csv_columns)
            logger.info("Report written: %s", csv_path)
            paths["csv"] = csv_path
        return paths

    def print_timing_table(self) -> None:
        """Human-readable timing table on stdout."""
        header = (
            f"{'Name':<28} {'N':>6} {'Fail':>5} "
            f"{'Avg':>9} {'Med':>9} {'Max':>9} {'p90':>9} {'p95':>9} {'p99':>9}"
        )
        print("\n" + "=" * len(header))
        print(header)
        print("-" * len(header))
        for row in self.timing_rows():
            def _fmt(v: Any) -> str:
                return f"{v:>9.2f}" if isinstance(v, (int, float)) else f"{'N/A':>9}"

            print(
                f"{row['name']:<28} {row['count']:>6} {row['failures']:>5} "
                f"{_fmt(row['avg_ms'])} {_fmt(row['median_ms'])} {_fmt(row['max_ms'])} "
                f"{_fmt(row['p90_ms'])} {_fmt(row['p95_ms'])} {_fmt(row['p99_ms'])}"
            )
        print("=" * len(header) + "\n")


def write_rows(path: Path, rows: Sequence[dict[str, Any]], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return path
