"""Synchronous wall-clock timing for encode / decode / training steps."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator

from src.telemetry.metrics import TimingCollector


@dataclass
class Timing:
    name: str
    elapsed_ms: float = 0.0


@contextmanager
def time_block(name: str, collector: TimingCollector | None = None) -> Iterator[Timing]:
    """
    Measure elapsed wall-clock time for a code block and, when *collector*
    is given, record it there (as a failure if the block raised).

    Usage::

        with time_block("encode", collector) as t:
            container = system.compress(x, lambda_id)
        print(t.elapsed_ms)
    """
    start = time.perf_counter()
    timing = Timing(name=name)
    failed = False
    try:
        yield timing
    except BaseException:
        failed = True
        raise
    finally:
        timing.elapsed_ms = (time.perf_counter() - start) * 1000.0
        if collector is not None:
            collector.record(name, timing.elapsed_ms, failed=failed)
