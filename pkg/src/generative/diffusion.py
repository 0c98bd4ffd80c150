"""
Diffusion algebra for the next-frame backbone.

Cosine schedule ``alpha_t = cos(pi t / 2T)``, ``sigma_t = sin(pi t / 2T)``
with v-prediction::

    z_t  = alpha_t z0 + sigma_t eps
    v    = alpha_t eps - sigma_t z0
    z0^  = alpha_t z_t - sigma_t v
    eps^ = sigma_t z_t + alpha_t v

The multi-step sampler is deterministic DDIM on a uniformly spaced
descending integer grid from ``T`` to 0; the one-step decode evaluates the
backbone once at ``t*`` on the bypass latent, without adding noise.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Protocol

import torch

from src.errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_TIMESTEPS = 1000
DEFAULT_T_STAR = 500


class VelocityModel(Protocol):
    def __call__(self, z_anchor: torch.Tensor, z_t: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor: ...


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int
    alpha: torch.Tensor   # float64, T+1 entries
    sigma: torch.Tensor

    def coefficients(
        self, t: torch.Tensor | int, like: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """``(alpha_t, sigma_t)`` broadcastable against *like* (``B x ...``)."""
        t = torch.as_tensor(t, dtype=torch.long).cpu()
        if (t < 0).any() or (t > self.timesteps).any():
            raise ConfigurationError(f"timestep outside [0, {self.timesteps}]")
        a = self.alpha[t].to(device=like.device, dtype=like.dtype)
        s = self.sigma[t].to(device=like.device, dtype=like.dtype)
        if a.ndim == 1:
            shape = (-1,) + (1,) * (like.ndim - 1)
            a, s = a.view(shape), s.view(shape)
        return a, s


def make_schedule(timesteps: int = DEFAULT_TIMESTEPS, kind: str = "cosine") -> NoiseSchedule:
    if kind != "cosine":
        raise ConfigurationError(f"unsupported noise schedule {kind!r}; only 'cosine' is available")
    if timesteps < 1:
        raise ConfigurationError("schedule needs at least one timestep")
    theta = torch.arange(timesteps + 1, dtype=torch.float64) * (math.pi / (2 * timesteps))
    alpha = torch.cos(theta)
    sigma = torch.sin(theta)
    alpha[0], sigma[0] = 1.0, 0.0
    alpha[-1], sigma[-1] = 0.0, 1.0
    return NoiseSchedule(timesteps=timesteps, alpha=alpha, sigma=sigma)


# ---------------------------------------------------------------------------
# v-prediction algebra
# ---------------------------------------------------------------------------

def add_noise(schedule: NoiseSchedule, z0: torch.Tensor, t: torch.Tensor | int, eps: torch.Tensor) -> torch.Tensor:
    if z0.shape != eps.shape:
        raise ShapeError(f"noise {tuple(eps.shape)} does not match latent {tuple(z0.shape)}")
    a, s = schedule.coefficients(t, z0)
    return a * z0 + s * eps


def velocity_target(schedule: NoiseSchedule, z0: torch.Tensor, t: torch.Tensor | int, eps: torch.Tensor) -> torch.Tensor:
    a, s = schedule.coefficients(t, z0)
    return a * eps - s * z0


def predict_z0(schedule: NoiseSchedule, z_t: torch.Tensor, v: torch.Tensor, t: torch.Tensor | int) -> torch.Tensor:
    a, s = schedule.coefficients(t, z_t)
    return a * z_t - s * v


def predict_eps(schedule: NoiseSchedule, z_t: torch.Tensor, v: torch.Tensor, t: torch.Tensor | int) -> torch.Tensor:
    a, s = schedule.coefficients(t, z_t)
    return s * z_t + a * v


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def timestep_grid(timesteps: int, steps: int) -> list[int]:
    """Descending integer grid ``T = t_0 > ... > t_steps = 0``."""
    if not 1 <= steps <= timesteps:
        raise ConfigurationError(f"steps must lie in [1, {timesteps}], got {steps}")
    grid = torch.linspace(timesteps, 0, steps + 1, dtype=torch.float64).round().long()
    return grid.tolist()


def initial_noise(
    shape: tuple[int, ...], seed: int, *, device: torch.device | str = "cpu", dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    gen = torch.Generator(device="cpu").manual_seed(seed)
    return torch.randn(shape, generator=gen, dtype=dtype).to(device)


@torch.no_grad()
def sample_multistep(
    backbone: VelocityModel,
    schedule: NoiseSchedule,
    z_anchor: torch.Tensor,
    steps: int,
    seed: int,
    *,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Deterministic DDIM from pure noise at ``t = T``.  Exactly *steps*
    backbone evaluations; ``steps = 1`` is a single ``predict_z0`` at ``T``.
    """
    grid = timestep_grid(schedule.timesteps, steps)
    z = noise if noise is not None else initial_noise(
        tuple(z_anchor.shape), seed, device=z_anchor.device, dtype=z_anchor.dtype
    )
    for t, t_next in zip(grid[:-1], grid[1:]):
        v = backbone(z_anchor, z, t)
        z0_hat = predict_z0(schedule, z, v, t)
        eps_hat = predict_eps(schedule, z, v, t)
        a_next, s_next = schedule.coefficients(t_next, z)
        z = a_next * z0_hat + s_next * eps_hat
    return z


def decode_one_step(
    backbone: VelocityModel,
    schedule: NoiseSchedule,
    z_bypass: torch.Tensor,
    z_anchor: torch.Tensor,
    t_star: int = DEFAULT_T_STAR,
) -> torch.Tensor:
    """Treat *z_bypass* as the state at ``t*`` and recover z0 in one forward."""
    v = backbone(z_anchor, z_bypass, t_star)
    return predict_z0(schedule, z_bypass, v, t_star)
