"""
Timing collection and percentile computation.

Accumulates per-name wall-clock samples (encode, decode, train step,
validation pass) so avg / median / p90 / p95 / p99 can be reported at the
end of a run and exported via reporter.py.

- Thread-safe using a threading.Lock (evaluation may fan out per image).
- Samples are stored as float milliseconds in a bounded deque so memory
  stays flat during long training runs.
- Summary statistics are emitted per name AND in aggregate.
"""
from __future__ import annotations

import statistics
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any

# Maximum number of raw samples kept per name.
_MAX_SAMPLES_PER_NAME: int = 10_000


@dataclass
class NamedTimings:
    """Per-name aggregated timings."""

    name: str
    count: int = 0
    failures: int = 0
    _samples: deque = field(default_factory=lambda: deque(maxlen=_MAX_SAMPLES_PER_NAME))
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, elapsed_ms: float, *, failed: bool = False) -> None:
        with self._lock:
            self.count += 1
            if failed:
                self.failures += 1
            else:
                self._samples.append(elapsed_ms)

    def samples(self) -> list[float]:
        with self._lock:
            return list(self._samples)

    def summary(self) -> dict[str, Any]:
        return _summarise(self.name, self.samples(), self.count, self.failures)


class TimingCollector:
    """
    Central collector for named timings.

    Usage::

        collector = TimingCollector()
        with time_block("decode", collector) as t:
            ...
        collector.summary("decode")["p95_ms"]
    """

    def __init__(self) -> None:
        self._timings: dict[str, NamedTimings] = {}
        self._lock = threading.Lock()

    def _entry(self, name: str) -> NamedTimings:
        with self._lock:
            if name not in self._timings:
                self._timings[name] = NamedTimings(name=name)
            return self._timings[name]

    def record(self, name: str, elapsed_ms: float, *, failed: bool = False) -> None:
        self._entry(name).record(elapsed_ms, failed=failed)

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._timings)

    def summary(self, name: str) -> dict[str, Any]:
        return self._entry(name).summary()

    def all_summaries(self) -> list[dict[str, Any]]:
        """Per-name summary dicts, sorted by name."""
        return [self.summary(n) for n in self.names()]

    def aggregate_summary(self) -> dict[str, Any]:
        """A single summary across ALL names."""
        with self._lock:
            entries = list(self._timings.values())
        samples: list[float] = []
        count = failures = 0
        for entry in entries:
            samples.extend(entry.samples())
            count += entry.count
            failures += entry.failures
        return _summarise("__AGGREGATE__", samples, count, failures)


# ---------------------------------------------------------------------------
# Internal helpers
# ---------------------------------------------------------------------------

def _summarise(name: str, samples: list[float], count: int, failures: int) -> dict[str, Any]:
    base = {"name": name, "count": count, "failures": failures}
    if not samples:
        return {
            **base,
            "avg_ms": None, "median_ms": None, "max_ms": None,
            "p90_ms": None, "p95_ms": None, "p99_ms": None,
        }
    sorted_s = sorted(samples)
    return {
        **base,
        "avg_ms": round(statistics.mean(samples), 3),
        "median_ms": round(statistics.median(sorted_s), 3),
        "max_ms": round(sorted_s[-1], 3),
        "p90_ms": round(_percentile(sorted_s, 90), 3),
        "p95_ms": round(_percentile(sorted_s, 95), 3),
        "p99_ms": round(_percentile(sorted_s, 99), 3),
    }


def _percentile(sorted_samples: list[float], pct: float) -> float:
    """
    Linear interpolation percentile (matches numpy's default method).
    *sorted_samples* must already be sorted ascending.
    """
    if not sorted_samples:
        return 0.0
    n = len(sorted_samples)
    idx = (pct / 100) * (n - 1)
    lo = int(idx)
    hi = lo + 1
    if hi >= n:
        return sorted_samples[-1]
    frac = idx - lo
    return sorted_samples[lo] + frac * (sorted_samples[hi] - sorted_samples[lo])
