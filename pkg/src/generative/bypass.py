"""
Bypass refiner: maps the anchor decoder's 1/8-scale feature to a latent on
the generative side, used as the starting state of the one-step decode.
"""
from __future__ import annotations

import torch
from einops import rearrange
from torch import nn

from src.errors import ShapeError
from src.generative.nextframe_dit import TransformerBlock, frame_coords


class BypassRefiner(nn.Module):
    def __init__(
        self,
        *,
        feature_channels: int = 96,
        latent_channels: int = 8,
        dim: int = 128,
        heads: int = 4,
        blocks: int = 2,
    ) -> None:
        super().__init__()
        self.feature_channels = feature_channels
        self.latent_channels = latent_channels
        self.proj_in = nn.Linear(feature_channels, dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, heads, modulated=False) for _ in range(blocks)
        )
        self.norm_out = nn.LayerNorm(dim)
        self.proj_out = nn.Linear(dim, latent_channels)

    def forward(self, h_dec: torch.Tensor) -> torch.Tensor:
        if h_dec.ndim != 4 or h_dec.shape[1] != self.feature_channels:
            raise ShapeError(
                f"bypass input must be B x {self.feature_channels} x h x w, got {tuple(h_dec.shape)}"
            )
        _, _, h, w = h_dec.shape
        x = self.proj_in(rearrange(h_dec, "b c h w -> b (h w) c"))
        coords = frame_coords((h, w), 0, h_dec.device)
        for block in self.blocks:
            x = block(x, coords)
        out = self.proj_out(self.norm_out(x))
        return rearrange(out, "b (h w) c -> b c h w", h=h, w=w)


def refine_bypass(refiner: BypassRefiner, h_dec: torch.Tensor) -> torch.Tensor:
    return refiner(h_dec)
