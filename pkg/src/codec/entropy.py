"""
Entropy models for the anchor codec.

  - ``FactorizedDensity``: learned per-channel cumulative for the hyper-latent
    (softplus-weighted monotone MLP with tanh factors).
  - ``gaussian_likelihood``: mass of the unit bin around each element under a
    mean-scale Gaussian, used for the main latent.
  - ``RateEstimate`` / ``estimate_rate``: bits accounting in the form the
    training losses and the bitstream consistency checks consume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

SCALE_MIN = 0.11
LIKELIHOOD_MIN = 1e-9


def standard_normal_cdf(values: torch.Tensor) -> torch.Tensor:
    # erfc keeps precision in the left tail
    return 0.5 * torch.erfc(-(2 ** -0.5) * values)


def gaussian_likelihood(
    values: torch.Tensor,
    means: torch.Tensor,
    scales: torch.Tensor,
    *,
    scale_min: float = SCALE_MIN,
) -> torch.Tensor:
    scales = scales.clamp_min(scale_min)
    centred = (values - means).abs().neg()
    upper = standard_normal_cdf((centred + 0.5) / scales)
    lower = standard_normal_cdf((centred - 0.5) / scales)
    return upper - lower


# ---------------------------------------------------------------------------
# Factorized density for the hyper-latent
# ---------------------------------------------------------------------------

class _FactorizedLayer(nn.Module):
    def __init__(self, channels: int, fan_in: int, fan_out: int, scale: float, factor: bool):
        super().__init__()
        self.weight = nn.Parameter(
            torch.full((channels, fan_out, fan_in), math.log(math.expm1(1 / scale / fan_out)))
        )
        self.bias = nn.Parameter(torch.empty(channels, fan_out, 1).uniform_(-0.5, 0.5))
        self.factor = nn.Parameter(torch.zeros(channels, fan_out, 1)) if factor else None

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        out = F.softplus(self.weight) @ values + self.bias
        if self.factor is not None:
            out = out + torch.tanh(self.factor) * torch.tanh(out)
        return out


class FactorizedDensity(nn.Module):
    """Per-channel learned cumulative; inputs are ``(B, C, ...)`` grids."""

    def __init__(
        self,
        channels: int,
        *,
        init_scale: float = 10.0,
        filters: tuple[int, ...] = (3, 3, 3),
    ) -> None:
        super().__init__()
        self.channels = channels
        dims = (1, *filters, 1)
        scale = init_scale ** (1 / (len(dims) + 1))
        self.layers = nn.ModuleList(
            _FactorizedLayer(channels, dims[i], dims[i + 1], scale, factor=i < len(filters))
            for i in range(len(filters) + 1)
        )

    def logits_cumulative(self, values: torch.Tensor) -> torch.Tensor:
        moved = values.transpose(0, 1)
        tmp = moved.reshape(self.channels, 1, -1)
        for layer in self.layers:
            tmp = layer(tmp)
        return tmp.reshape_as(moved).transpose(0, 1)

    def likelihood(self, values: torch.Tensor) -> torch.Tensor:
        upper = self.logits_cumulative(values + 0.5)
        lower = self.logits_cumulative(values - 0.5)
        # difference taken in the left tail of the sigmoid
        sign = -torch.sign(upper + lower).detach()
        return (torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower)).abs()

    @torch.no_grad()
    def pmf_table(self, lower: int, upper: int) -> np.ndarray:
        """``(C, K)`` float64 masses over the integer support ``lower..upper``."""
        param = next(self.parameters())
        support = torch.arange(lower, upper + 1, dtype=param.dtype, device=param.device)
        grid = support.expand(1, self.channels, -1)
        return self.likelihood(grid)[0].double().cpu().numpy()


# ---------------------------------------------------------------------------
# Rate accounting
# ---------------------------------------------------------------------------

@dataclass
class RateEstimate:
    """
    Estimated bits of one batch.  ``num_pixels`` counts source pixels over the
    whole batch, so ``bpp`` is the per-image average.
    """

    latent_bits: torch.Tensor
    hyper_bits: torch.Tensor
    num_pixels: int

    @property
    def total_bits(self) -> torch.Tensor:
        return self.latent_bits + self.hyper_bits

    @property
    def bpp(self) -> torch.Tensor:
        return self.total_bits / self.num_pixels

    @property
    def per_stream(self) -> dict[str, float]:
        return {
            "latent_bits": float(self.latent_bits.detach()),
            "hyper_bits": float(self.hyper_bits.detach()),
        }

    @classmethod
    def from_likelihoods(
        cls,
        latent_likelihood: torch.Tensor,
        hyper_likelihood: torch.Tensor,
        num_pixels: int,
    ) -> "RateEstimate":
        return cls(
            latent_bits=_bits(latent_likelihood),
            hyper_bits=_bits(hyper_likelihood),
            num_pixels=num_pixels,
        )


@dataclass(frozen=True)
class EntropyParameters:
    """Per-element Gaussian parameters for y plus the hyper density."""

    means: torch.Tensor
    scales: torch.Tensor
    hyper_density: FactorizedDensity


def estimate_rate(
    y_q: torch.Tensor,
    h_q: torch.Tensor,
    params: EntropyParameters,
    *,
    image_size: tuple[int, int] | None = None,
) -> RateEstimate:
    """
    Bits for ``(y_q, h_q)``.  Differentiable in ``y_q``, ``h_q`` and the
    parameters; scales below ``SCALE_MIN`` are clamped, never rejected.
    """
    if image_size is None:
        image_size = (y_q.shape[-2] * 16, y_q.shape[-1] * 16)
    num_pixels = y_q.shape[0] * image_size[0] * image_size[1]
    return RateEstimate.from_likelihoods(
        gaussian_likelihood(y_q, params.means, params.scales),
        params.hyper_density.likelihood(h_q),
        num_pixels,
    )


def _bits(likelihood: torch.Tensor) -> torch.Tensor:
    return -torch.log2(likelihood.clamp_min(LIKELIHOOD_MIN)).sum()
