"""
Low-rank adapters for the attention projections.

``LoRALinear`` wraps a frozen ``nn.Linear`` and adds ``scale * up @ down``
to its weight.  ``up`` starts at zero so a fresh adapter leaves the forward
pass bit-identical to the base layer.
"""
from __future__ import annotations

import logging
import math
from typing import Iterator

import torch
import torch.nn.functional as F
from torch import nn

from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

ATTENTION_PROJECTIONS: tuple[str, ...] = ("to_q", "to_k", "to_v", "to_out")


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float) -> None:
        super().__init__()
        if rank <= 0:
            raise ConfigurationError(f"LoRA rank must be positive, got {rank}")
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scale = alpha / rank
        self.down = nn.Parameter(torch.empty(rank, base.in_features))
        self.up = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.down, a=math.sqrt(5))
        for p in self.base.parameters():
            p.requires_grad_(False)

    @property
    def in_features(self) -> int:
        return self.base.in_features

    @property
    def out_features(self) -> int:
        return self.base.out_features

    def delta_weight(self) -> torch.Tensor:
        return self.scale * (self.up @ self.down)

    def merged_weight(self) -> torch.Tensor:
        return self.base.weight + self.delta_weight()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * F.linear(F.linear(x, self.down), self.up)

    def extra_repr(self) -> str:
        return f"rank={self.rank}, alpha={self.alpha}"


def lora_merge(
    base_weight: torch.Tensor,
    up: torch.Tensor,
    down: torch.Tensor,
    scale: float,
) -> torch.Tensor:
    """``base + scale * up @ down`` with rank consistency checks."""
    if up.shape[1] != down.shape[0]:
        raise ConfigurationError(
            f"adapter rank mismatch: up has rank {up.shape[1]}, down has rank {down.shape[0]}"
        )
    if (up.shape[0], down.shape[1]) != tuple(base_weight.shape):
        raise ConfigurationError(
            f"adapter shape {up.shape[0]}x{down.shape[1]} does not match "
            f"base weight {tuple(base_weight.shape)}"
        )
    return base_weight + scale * (up @ down)


def inject_lora(model: nn.Module, rank: int, alpha: float) -> int:
    """Replace every attention projection Linear in *model*; returns the count."""
    targets = [
        (parent, name)
        for parent in model.modules()
        for name, child in parent.named_children()
        if name in ATTENTION_PROJECTIONS and isinstance(child, nn.Linear)
    ]
    for parent, name in targets:
        setattr(parent, name, LoRALinear(getattr(parent, name), rank, alpha))
    logger.info("[lora] injected %d adapters (rank=%d, alpha=%.3g)", len(targets), rank, alpha)
    return len(targets)


def lora_modules(model: nn.Module) -> Iterator[LoRALinear]:
    for module in model.modules():
        if isinstance(module, LoRALinear):
            yield module


def lora_parameters(model: nn.Module) -> Iterator[nn.Parameter]:
    for module in lora_modules(model):
        yield module.down
        yield module.up


@torch.no_grad()
def merge_lora(model: nn.Module) -> int:
    """Fold every adapter into a plain ``nn.Linear``; returns the count merged."""
    targets = [
        (parent, name, child)
        for parent in model.modules()
        for name, child in parent.named_children()
        if isinstance(child, LoRALinear)
    ]
    for parent, name, adapter in targets:
        merged = nn.Linear(
            adapter.in_features,
            adapter.out_features,
            bias=adapter.base.bias is not None,
            device=adapter.base.weight.device,
            dtype=adapter.base.weight.dtype,
        )
        merged.weight.copy_(
            lora_merge(adapter.base.weight, adapter.up, adapter.down, adapter.scale)
        )
        if adapter.base.bias is not None:
            merged.bias.copy_(adapter.base.bias)
        merged.requires_grad_(False)
        setattr(parent, name, merged)
    return len(targets)
