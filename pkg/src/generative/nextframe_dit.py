"""
Next-frame DiT.

The backbone sees one sequence per image::

    [ prompt (16) | anchor frame patches | noisy target frame patches ]

with integer (frame, row, col) coordinates per token: prompt tokens carry
the sentinel (-1, -1, -1), anchor patches frame 0 and target patches frame 1.
Attention is full and bidirectional with 3D rotary embeddings on queries and
keys.  Every block is modulated by the timestep embedding (adaLN-Zero); only
the target-segment outputs are un-patchified and returned as the
v-prediction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator

import torch
from einops import rearrange
from torch import nn

from src.errors import ConfigurationError, ContractError, ShapeError
from src.generative.lora import inject_lora, lora_parameters
from src.generative.rope import rope3d

logger = logging.getLogger(__name__)

SEGMENT_TEXT = 0
SEGMENT_ANCHOR = 1
SEGMENT_TARGET = 2
SENTINEL = -1
PATCH = 2


def default_partition(head_dim: int) -> tuple[int, int, int]:
    """(frame, row, col) rotary split; (8, 12, 12) for a 32-dim head."""
    frame = 2 * max(1, head_dim // 8)
    rest = head_dim - frame
    row = (rest // 2) // 2 * 2
    col = rest - row
    if head_dim % 2 or min(frame, row, col) <= 0 or col % 2:
        raise ConfigurationError(f"head dim {head_dim} cannot be split across 3 rotary axes")
    return frame, row, col


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


# ---------------------------------------------------------------------------
# Token sequences
# ---------------------------------------------------------------------------

@dataclass
class TokenSequence:
    tokens: torch.Tensor          # B x L x D
    coords: torch.Tensor          # L x 3, int64
    segment_ids: torch.Tensor     # L, int64
    grid: tuple[int, int]         # patch grid of each frame

    def segment(self, segment_id: int) -> slice:
        idx = torch.nonzero(self.segment_ids == segment_id).flatten()
        if idx.numel() == 0:
            return slice(0, 0)
        return slice(int(idx[0]), int(idx[-1]) + 1)

    def validate(self) -> None:
        ids = self.segment_ids.tolist()
        if any(b < a for a, b in zip(ids, ids[1:])):
            raise ContractError("segments must be contiguous in text -> anchor -> target order")
        anchor = self.segment(SEGMENT_ANCHOR)
        target = self.segment(SEGMENT_TARGET)
        if target.stop - target.start == 0:
            raise ContractError("token sequence has no target segment")
        if anchor.stop - anchor.start != target.stop - target.start:
            raise ContractError("anchor and target segments must have equal length")
        if (self.coords[anchor, 0] != 0).any() or (self.coords[target, 0] != 1).any():
            raise ContractError("anchor tokens must sit on frame 0 and target tokens on frame 1")
        text = self.segment(SEGMENT_TEXT)
        if (self.coords[text] != SENTINEL).any():
            raise ContractError("prompt tokens must carry sentinel coordinates")


def frame_coords(grid: tuple[int, int], frame: int, device: torch.device | None = None) -> torch.Tensor:
    gh, gw = grid
    rows, cols = torch.meshgrid(
        torch.arange(gh, device=device), torch.arange(gw, device=device), indexing="ij"
    )
    f = torch.full_like(rows, frame)
    return torch.stack([f, rows, cols], dim=-1).reshape(-1, 3)


def patchify(z: torch.Tensor) -> torch.Tensor:
    return rearrange(z, "b c (h p1) (w p2) -> b (h w) (c p1 p2)", p1=PATCH, p2=PATCH)


def unpatchify(tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
    return rearrange(
        tokens, "b (h w) (c p1 p2) -> b c (h p1) (w p2)", h=grid[0], w=grid[1], p1=PATCH, p2=PATCH
    )


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class TimestepEmbedder(nn.Module):
    def __init__(self, dim: int, frequency_size: int = 256) -> None:
        super().__init__()
        self.frequency_size = frequency_size
        self.mlp = nn.Sequential(
            nn.Linear(frequency_size, dim), nn.SiLU(), nn.Linear(dim, dim)
        )

    @staticmethod
    def sinusoid(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
        half = dim // 2
        freqs = torch.exp(
            -math.log(max_period) * torch.arange(half, dtype=torch.float32, device=t.device) / half
        )
        args = t[:, None].float() * freqs[None]
        return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        emb = self.sinusoid(t, self.frequency_size)
        return self.mlp(emb.to(self.mlp[0].weight.dtype))


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, partition: tuple[int, ...] | None = None) -> None:
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.partition = partition or default_partition(self.head_dim)
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.to_out = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        return rearrange(x, "b l (h d) -> b h l d", h=self.heads)

    def logits(self, x: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        """Pre-softmax attention logits ``B x heads x L x L``."""
        q, k = rope3d(self._split(self.to_q(x)), self._split(self.to_k(x)), coords, partition=self.partition)
        return q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)

    def forward(self, x: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        attn = self.logits(x, coords).softmax(dim=-1)
        out = attn @ self._split(self.to_v(x))
        return self.to_out(rearrange(out, "b h l d -> b l (h d)"))


class TransformerBlock(nn.Module):
    """Pre-norm attention + MLP; adaLN-Zero modulated when ``modulated``."""

    def __init__(self, dim: int, heads: int, *, modulated: bool = True, mlp_ratio: float = 4.0) -> None:
        super().__init__()
        self.modulated = modulated
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=not modulated, eps=1e-6)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=not modulated, eps=1e-6)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden), nn.GELU(approximate="tanh"), nn.Linear(hidden, dim)
        )
        if modulated:
            self.ada = nn.Sequential(nn.SiLU(), nn.Linear(dim, 6 * dim))
            nn.init.zeros_(self.ada[-1].weight)
            nn.init.zeros_(self.ada[-1].bias)

    def forward(self, x: torch.Tensor, coords: torch.Tensor, c: torch.Tensor | None = None) -> torch.Tensor:
        if not self.modulated:
            x = x + self.attn(self.norm1(x), coords)
            return x + self.mlp(self.norm2(x))
        shift1, scale1, gate1, shift2, scale2, gate2 = self.ada(c).chunk(6, dim=1)
        x = x + gate1.unsqueeze(1) * self.attn(modulate(self.norm1(x), shift1, scale1), coords)
        return x + gate2.unsqueeze(1) * self.mlp(modulate(self.norm2(x), shift2, scale2))


class FinalLayer(nn.Module):
    def __init__(self, dim: int, out_features: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(dim, 2 * dim))
        self.linear = nn.Linear(dim, out_features)
        for layer in (self.ada[-1], self.linear):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        shift, scale = self.ada(c).chunk(2, dim=1)
        return self.linear(modulate(self.norm(x), shift, scale))


# ---------------------------------------------------------------------------
# Backbone
# ---------------------------------------------------------------------------

class NextFrameDiT(nn.Module):
    def __init__(
        self,
        *,
        latent_channels: int = 8,
        dim: int = 128,
        heads: int = 4,
        blocks: int = 4,
        prompt_tokens: int = 16,
        timesteps: int = 1000,
    ) -> None:
        super().__init__()
        self.latent_channels = latent_channels
        self.dim = dim
        self.timesteps = timesteps
        patch_features = latent_channels * PATCH * PATCH

        self.prompt = nn.Parameter(torch.randn(prompt_tokens, dim) * 0.02)
        self.patch_embed = nn.Linear(patch_features, dim)
        self.segment_embed = nn.Embedding(3, dim)
        nn.init.normal_(self.segment_embed.weight, std=0.02)
        self.t_embed = TimestepEmbedder(dim)
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads) for _ in range(blocks))
        self.final = FinalLayer(dim, patch_features)
        # backbone forward passes since construction; read by latency profiles
        self.forward_calls = 0

    @property
    def prompt_tokens(self) -> int:
        return self.prompt.shape[0]

    # --------------------------------------------------------------- tokenize
    def tokenize(self, z_anchor: torch.Tensor, z_t: torch.Tensor) -> TokenSequence:
        if z_anchor.shape != z_t.shape:
            raise ShapeError(
                f"anchor latent {tuple(z_anchor.shape)} and noisy latent "
                f"{tuple(z_t.shape)} must have the same shape"
            )
        b, c, h, w = z_t.shape
        if c != self.latent_channels:
            raise ShapeError(f"expected {self.latent_channels} latent channels, got {c}")
        if h % PATCH or w % PATCH:
            raise ShapeError(f"latent size {h}x{w} must be a multiple of {PATCH}")
        grid = (h // PATCH, w // PATCH)
        n = grid[0] * grid[1]
        device = z_t.device

        coords = torch.cat([
            torch.full((self.prompt_tokens, 3), SENTINEL, dtype=torch.long, device=device),
            frame_coords(grid, 0, device),
            frame_coords(grid, 1, device),
        ])
        segment_ids = torch.cat([
            torch.full((self.prompt_tokens,), SEGMENT_TEXT, dtype=torch.long, device=device),
            torch.full((n,), SEGMENT_ANCHOR, dtype=torch.long, device=device),
            torch.full((n,), SEGMENT_TARGET, dtype=torch.long, device=device),
        ])
        tokens = torch.cat([
            self.prompt.unsqueeze(0).expand(b, -1, -1),
            self.patch_embed(patchify(z_anchor)),
            self.patch_embed(patchify(z_t)),
        ], dim=1)
        tokens = tokens + self.segment_embed(segment_ids).unsqueeze(0)
        return TokenSequence(tokens=tokens, coords=coords, segment_ids=segment_ids, grid=grid)

    # ---------------------------------------------------------------- forward
    def _timesteps(self, t: torch.Tensor | float, batch: int, device: torch.device) -> torch.Tensor:
        t = torch.as_tensor(t, device=device, dtype=torch.float32)
        if t.ndim == 0:
            t = t.expand(batch)
        if (t < 0).any() or (t > self.timesteps).any():
            raise ConfigurationError(f"timesteps must lie in [0, {self.timesteps}]")
        return t

    def forward_tokens(self, seq: TokenSequence, t: torch.Tensor | float) -> torch.Tensor:
        seq.validate()
        self.forward_calls += 1
        x = seq.tokens
        c = self.t_embed(self._timesteps(t, x.shape[0], x.device))
        for block in self.blocks:
            x = block(x, seq.coords, c)
        out = self.final(x[:, seq.segment(SEGMENT_TARGET)], c)
        return unpatchify(out, seq.grid)

    def forward(self, z_anchor: torch.Tensor, z_t: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor:
        return self.forward_tokens(self.tokenize(z_anchor, z_t), t)

    # ------------------------------------------------------------- adaptation
    def add_lora(self, rank: int, alpha: float) -> int:
        return inject_lora(self.blocks, rank, alpha)

    def adaptation_parameters(self) -> Iterator[nn.Parameter]:
        """LoRA adapters, the prompt and the token projection."""
        yield from lora_parameters(self)
        yield self.prompt
        yield from self.patch_embed.parameters()
        yield from self.segment_embed.parameters()

    def freeze_base(self) -> None:
        trainable = {id(p) for p in self.adaptation_parameters()}
        for p in self.parameters():
            p.requires_grad_(id(p) in trainable)
