"""
Latent quantization.

``noise`` is the additive-uniform proxy used on the training rate path,
``round`` is what the encoder transmits, ``ste`` rounds in value and passes
gradients through unchanged (training reconstruction path).
"""
from __future__ import annotations

from typing import Literal

import torch

from src.errors import ConfigurationError

QuantizationMode = Literal["noise", "round", "ste"]
QUANTIZATION_MODES: tuple[str, ...] = ("noise", "round", "ste")


def quantize(
    values: torch.Tensor,
    mode: str,
    *,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    if mode == "noise":
        # U(-0.5, 0.5); torch.rand draws from [0, 1)
        u = torch.rand(
            values.shape, generator=generator, device=values.device, dtype=values.dtype
        )
        return values + (u - 0.5)
    if mode == "round":
        # torch.round rounds half to even
        return torch.round(values)
    if mode == "ste":
        return torch.round(values) - values.detach() + values
    raise ConfigurationError(
        f"unknown quantization mode {mode!r}; expected one of {QUANTIZATION_MODES}"
    )
