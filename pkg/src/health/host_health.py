"""
Host resource monitor for training and evaluation runs.

Probed once when a stage starts and then every ``NEFIC_HEALTH_EVERY`` steps
so a saturated machine shows up in the log next to the step counter.

Thresholds:
  - CPU  > 75% → warning; > 90% → critical
  - RAM  > 80% used → warning; > 90% → critical
  - open file descriptors > 80% of the soft limit → warning
"""
from __future__ import annotations

import logging
import os
import resource

import psutil

logger = logging.getLogger(__name__)

# ------------------------------------------------------------------ thresholds
_CPU_WARN_PCT = 75.0
_CPU_CRIT_PCT = 90.0
_MEM_WARN_PCT = 80.0
_MEM_CRIT_PCT = 90.0
_FD_WARN_RATIO = 0.80


class HostHealthStatus:
    """Snapshot of the current host and process."""

    def __init__(
        self,
        cpu_pct: float,
        mem_pct: float,
        rss_mb: float,
        open_fds: int,
        fd_limit: int,
    ) -> None:
        self.cpu_pct = cpu_pct
        self.mem_pct = mem_pct
        self.rss_mb = rss_mb
        self.open_fds = open_fds
        self.fd_limit = fd_limit

    @property
    def fd_ratio(self) -> float:
        return self.open_fds / self.fd_limit if self.fd_limit > 0 else 0.0

    @property
    def is_critical(self) -> bool:
        return self.cpu_pct >= _CPU_CRIT_PCT or self.mem_pct >= _MEM_CRIT_PCT

    @property
    def is_healthy(self) -> bool:
        return (
            self.cpu_pct < _CPU_WARN_PCT
            and self.mem_pct < _MEM_WARN_PCT
            and self.fd_ratio < _FD_WARN_RATIO
        )

    def as_dict(self) -> dict[str, float]:
        return {
            "cpu_pct": self.cpu_pct,
            "mem_pct": self.mem_pct,
            "rss_mb": round(self.rss_mb, 1),
            "open_fds": self.open_fds,
            "fd_limit": self.fd_limit,
        }

    def log(self, step: int | None = None) -> None:
        level = logging.DEBUG if self.is_healthy else logging.WARNING
        logger.log(
            level,
            "[host-health] step=%s CPU=%.1f%%  MEM=%.1f%%  RSS=%.0fMB  FD=%d/%d",
            "-" if step is None else step,
            self.cpu_pct,
            self.mem_pct,
            self.rss_mb,
            self.open_fds,
            self.fd_limit,
        )
        if self.cpu_pct >= _CPU_CRIT_PCT:
            logger.critical(
                "[host-health] CRITICAL: CPU %.1f%% exceeds %.0f%%; step timings are unreliable.",
                self.cpu_pct,
                _CPU_CRIT_PCT,
            )
        if self.mem_pct >= _MEM_CRIT_PCT:
            logger.critical(
                "[host-health] CRITICAL: RAM %.1f%% exceeds %.0f%%; lower data.batch_size or crop_max.",
                self.mem_pct,
                _MEM_CRIT_PCT,
            )


def check_host_health(step: int | None = None) -> HostHealthStatus:
    cpu_pct = psutil.cpu_percent(interval=0.1)
    mem_pct = psutil.virtual_memory().percent
    rss_mb = psutil.Process().memory_info().rss / 2**20

    try:
        soft_limit, _ = resource.getrlimit(resource.RLIMIT_NOFILE)
        open_fds = len(os.listdir("/proc/self/fd"))
    except (OSError, PermissionError):
        soft_limit = 0
        open_fds = 0

    status = HostHealthStatus(
        cpu_pct=cpu_pct,
        mem_pct=mem_pct,
        rss_mb=rss_mb,
        open_fds=open_fds,
        fd_limit=soft_limit,
    )
    status.log(step)
    return status


def assert_host_healthy(*, raise_on_critical: bool = False) -> HostHealthStatus:
    """Check health and optionally refuse to start on a saturated machine."""
    status = check_host_health()
    if status.is_critical and raise_on_critical:
        raise RuntimeError(
            f"Host health check failed: CPU={status.cpu_pct:.1f}% "
            f"MEM={status.mem_pct:.1f}%. Refusing to start the run."
        )
    return status
