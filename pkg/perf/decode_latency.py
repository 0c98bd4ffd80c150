"""
Decode-latency profiles
=======================

Goal: show what collapsing multi-step sampling to one step buys at decode
time, and how decode cost scales with image size.

Profiles:
  - Step ladder:        one-step decode vs N-step sampling (N in 1, 10, 50)
                        at a fixed resolution; backbone forwards are counted,
                        not inferred, from ``NextFrameDiT.forward_calls``.
  - Resolution ladder:  one-step decode at 64, 128 and 256 px squares.

Each profile point runs ``repeats`` timed decodes after one warm-up and
reports avg / p50 / p95 through the shared ``TimingCollector``.

Run directly for a table on stdout::

    python -m perf.decode_latency --repeats 5
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass, field
from typing import Any

import torch

from src.config import RunConfig
from src.generative.diffusion import decode_one_step, sample_multistep
from src.pipeline.system import NeficSystem
from src.telemetry.metrics import TimingCollector
from src.telemetry.reporter import RunReporter
from src.telemetry.timings import time_block

logger = logging.getLogger(__name__)

STEP_LADDER: tuple[int, ...] = (1, 10, 50)
RESOLUTION_LADDER: tuple[int, ...] = (64, 128, 256)


@dataclass(frozen=True)
class ProfilePoint:
    """One measured configuration."""

    name: str
    side: int
    steps: int          # 0 = one-step decode from the bypass latent
    forwards: int       # backbone forwards per decode


@dataclass
class LatencyProfile:
    points: list[ProfilePoint] = field(default_factory=list)
    collector: TimingCollector = field(default_factory=TimingCollector)

    def rows(self) -> list[dict[str, Any]]:
        return [
            {**vars(p), **{k: v for k, v in self.collector.summary(p.name).items() if k.endswith("_ms")}}
            for p in self.points
        ]


def _latents(system: NeficSystem, side: int, seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    gen = torch.Generator().manual_seed(seed)
    c = system.config.model.latent_channels
    shape = (1, c, side // 8, side // 8)
    return torch.randn(shape, generator=gen), torch.randn(shape, generator=gen)


@torch.no_grad()
def count_forwards(system: NeficSystem, side: int, steps: int) -> int:
    """Backbone forwards issued by one decode (``steps = 0`` is one-step)."""
    z_anchor, z_start = _latents(system, side, 0)
    before = system.backbone.forward_calls
    if steps:
        sample_multistep(system.backbone, system.schedule, z_anchor, steps, seed=0)
    else:
        decode_one_step(system.backbone, system.schedule, z_start, z_anchor, system.t_star)
    return system.backbone.forward_calls - before


@torch.no_grad()
def _profile_point(profile: LatencyProfile, system: NeficSystem, side: int, steps: int, repeats: int) -> None:
    name = f"{side}px_{'one_step' if steps == 0 else f'{steps}_steps'}"
    forwards = count_forwards(system, side, steps)  # doubles as warm-up
    z_anchor, z_start = _latents(system, side, 1)
    for _ in range(repeats):
        with time_block(name, profile.collector):
            if steps:
                sample_multistep(system.backbone, system.schedule, z_anchor, steps, seed=0)
            else:
                decode_one_step(system.backbone, system.schedule, z_start, z_anchor, system.t_star)
    profile.points.append(ProfilePoint(name=name, side=side, steps=steps, forwards=forwards))
    logger.info("[perf] %s: %d forward(s)", name, forwards)


def run_profiles(
    system: NeficSystem,
    *,
    repeats: int = 3,
    step_ladder: tuple[int, ...] = STEP_LADDER,
    resolutions: tuple[int, ...] = RESOLUTION_LADDER,
    step_side: int = 64,
) -> LatencyProfile:
    system.eval()
    profile = LatencyProfile()
    _profile_point(profile, system, step_side, 0, repeats)
    for steps in step_ladder:
        _profile_point(profile, system, step_side, steps, repeats)
    for side in resolutions:
        if side != step_side:
            _profile_point(profile, system, side, 0, repeats)
    return profile


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Decode latency profiles on an untrained model")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO)

    torch.manual_seed(0)
    system = NeficSystem(RunConfig())
    profile = run_profiles(system, repeats=args.repeats)
    reporter = RunReporter("decode-latency", stage="perf", collector=profile.collector)
    reporter.print_timing_table()
    reporter.write_report(profile.rows())
    for row in profile.rows():
        print(f"{row['name']:<24} forwards={row['forwards']:>3}  avg={row['avg_ms']} ms")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
