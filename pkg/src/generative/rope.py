"""
Rotary position embeddings over (frame, row, col) token coordinates.

The head dimension is split into contiguous blocks, one per axis; within a
block consecutive channel pairs are rotated by ``pos * base**(-2i/d)``.
Tokens whose frame coordinate is negative (the prompt sentinel) are left
unrotated.
"""
from __future__ import annotations

import torch

from src.errors import ConfigurationError

DEFAULT_PARTITION: tuple[int, int, int] = (8, 12, 12)


def rope_angles(
    coords: torch.Tensor,
    head_dim: int,
    *,
    partition: tuple[int, ...] = DEFAULT_PARTITION,
    base: float = 10000.0,
    dtype: torch.dtype = torch.float32,
) -> tuple[torch.Tensor, torch.Tensor]:
    """``(cos, sin)`` of shape ``L x head_dim/2`` for integer ``L x 3`` coords."""
    if sum(partition) != head_dim or any(d % 2 for d in partition):
        raise ConfigurationError(
            f"head dim {head_dim} does not match rotary partition {partition}"
        )
    if coords.shape[-1] != len(partition):
        raise ConfigurationError(
            f"coords have {coords.shape[-1]} axes, partition has {len(partition)}"
        )
    pos = coords.to(dtype)
    angles = []
    for axis, dim in enumerate(partition):
        inv_freq = base ** (-torch.arange(0, dim, 2, dtype=dtype, device=coords.device) / dim)
        angles.append(pos[:, axis : axis + 1] * inv_freq[None, :])
    theta = torch.cat(angles, dim=-1)
    unrotated = (coords[:, 0] < 0)[:, None]
    theta = torch.where(unrotated, torch.zeros_like(theta), theta)
    return theta.cos(), theta.sin()


def apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate consecutive channel pairs of ``x (..., L, head_dim)``."""
    x1 = x[..., 0::2]
    x2 = x[..., 1::2]
    out = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return out.flatten(-2)


def rope3d(
    q: torch.Tensor,
    k: torch.Tensor,
    coords: torch.Tensor,
    *,
    partition: tuple[int, ...] = DEFAULT_PARTITION,
    base: float = 10000.0,
) -> tuple[torch.Tensor, torch.Tensor]:
    cos, sin = rope_angles(coords, q.shape[-1], partition=partition, base=base, dtype=q.dtype)
    return apply_rotary(q, cos, sin), apply_rotary(k, cos, sin)
