"""
Anchor codec: analysis/synthesis transforms with a mean-scale hyperprior.

Scales (relative to the source image)::

    x (1)  -> 64 (1/2) -> 96 (1/4) -> C_f (1/8, h_enc)
           -> [h_enc ; z0]  -> 128 (1/8) -> C_y (1/16) = y
    y      -> C_h (1/16) -> C_h (1/32) -> C_h (1/64) = h

The synthesis mirrors the analysis and exposes its 1/8-scale feature as
``h_dec`` for the bypass refiner.  When no generative latent is supplied the
concatenation receives zeros of identical channel count.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from src.codec.entropy import (
    SCALE_MIN,
    EntropyParameters,
    FactorizedDensity,
    RateEstimate,
    estimate_rate,
)
from src.codec.quantization import quantize
from src.errors import ConditioningError, ShapeError

logger = logging.getLogger(__name__)

IMAGE_MULTIPLE = 64


def conv(in_ch: int, out_ch: int, kernel_size: int = 5, stride: int = 2) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size, stride=stride, padding=kernel_size // 2)


def deconv(in_ch: int, out_ch: int, kernel_size: int = 5, stride: int = 2) -> nn.ConvTranspose2d:
    return nn.ConvTranspose2d(
        in_ch,
        out_ch,
        kernel_size,
        stride=stride,
        padding=kernel_size // 2,
        output_padding=stride - 1,
    )


def _act() -> nn.Module:
    return nn.LeakyReLU(0.2)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass
class AnchorLatent:
    """Main latent at 1/16 scale; ``quantized`` is what gets transmitted."""

    values: torch.Tensor
    quantized: torch.Tensor


@dataclass
class HyperLatent:
    """Side information at 1/64 scale."""

    values: torch.Tensor
    quantized: torch.Tensor


@dataclass
class AnchorEncoding:
    y: AnchorLatent
    h: HyperLatent
    rate: RateEstimate
    h_enc: torch.Tensor


@dataclass
class AnchorTrainOutput:
    """Mixed-quantization forward: noise on the rate path, ste on reconstruction."""

    x_anchor: torch.Tensor
    h_dec: torch.Tensor
    h_enc: torch.Tensor
    rate: RateEstimate


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------

class AnchorCodec(nn.Module):
    def __init__(
        self,
        *,
        latent_channels: int = 8,
        anchor_channels: int = 128,
        hyper_channels: int = 64,
        feature_channels: int = 96,
    ) -> None:
        super().__init__()
        self.latent_channels = latent_channels
        self.anchor_channels = anchor_channels
        self.hyper_channels = hyper_channels
        self.feature_channels = feature_channels

        self.enc_head = nn.Sequential(
            conv(3, 64), _act(),
            conv(64, 96), _act(),
            conv(96, feature_channels), _act(),
        )
        self.enc_tail = nn.Sequential(
            conv(feature_channels + latent_channels, 128, kernel_size=3, stride=1), _act(),
            conv(128, anchor_channels),
        )
        self.dec_head = nn.Sequential(
            deconv(anchor_channels, 128), _act(),
            conv(128, feature_channels, kernel_size=3, stride=1), _act(),
        )
        self.dec_tail = nn.Sequential(
            deconv(feature_channels, 96), _act(),
            deconv(96, 64), _act(),
            deconv(64, 3),
        )
        self.hyper_enc = nn.Sequential(
            conv(anchor_channels, hyper_channels, kernel_size=3, stride=1), _act(),
            conv(hyper_channels, hyper_channels), _act(),
            conv(hyper_channels, hyper_channels),
        )
        self.hyper_dec = nn.Sequential(
            deconv(hyper_channels, hyper_channels), _act(),
            deconv(hyper_channels, hyper_channels), _act(),
            conv(hyper_channels, 2 * anchor_channels, kernel_size=3, stride=1),
        )
        self.hyper_density = FactorizedDensity(hyper_channels)

    # ------------------------------------------------------------------ checks
    def _check_image(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected a B x 3 x H x W image, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % IMAGE_MULTIPLE or w % IMAGE_MULTIPLE:
            raise ShapeError(
                f"image size {h}x{w} must be a multiple of {IMAGE_MULTIPLE} on both axes"
            )

    def _condition(self, x: torch.Tensor, h_enc: torch.Tensor, z0: torch.Tensor | None) -> torch.Tensor:
        b, _, hh, ww = h_enc.shape
        if z0 is None:
            z0 = h_enc.new_zeros(b, self.latent_channels, hh, ww)
        elif z0.shape[0] != b or z0.shape[1] != self.latent_channels or z0.shape[-2:] != (hh, ww):
            raise ConditioningError(
                f"generative latent {tuple(z0.shape)} does not match image "
                f"{tuple(x.shape)}; expected {b}x{self.latent_channels}x{hh}x{ww}"
            )
        return torch.cat([h_enc, z0.to(h_enc.dtype)], dim=1)

    # --------------------------------------------------------------- entropy
    def entropy_parameters(self, h_q: torch.Tensor) -> EntropyParameters:
        scales_raw, means = self.hyper_dec(h_q).chunk(2, dim=1)
        scales = F.softplus(scales_raw).clamp_min(SCALE_MIN)
        return EntropyParameters(means=means, scales=scales, hyper_density=self.hyper_density)

    # ---------------------------------------------------------------- encode
    def encode_anchor(
        self,
        x: torch.Tensor,
        z0: torch.Tensor | None = None,
        mode: str = "round",
        *,
        generator: torch.Generator | None = None,
    ) -> AnchorEncoding:
        self._check_image(x)
        h_enc = self.enc_head(x)
        y = self.enc_tail(self._condition(x, h_enc, z0))
        h = self.hyper_enc(y)
        y_q = quantize(y, mode, generator=generator)
        h_q = quantize(h, mode, generator=generator)
        params = self.entropy_parameters(h_q)
        rate = estimate_rate(y_q, h_q, params, image_size=(x.shape[-2], x.shape[-1]))
        return AnchorEncoding(
            y=AnchorLatent(values=y, quantized=y_q),
            h=HyperLatent(values=h, quantized=h_q),
            rate=rate,
            h_enc=h_enc,
        )

    # ---------------------------------------------------------------- decode
    def decode_anchor(self, y_q: torch.Tensor, h_q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if y_q.shape[-2] != 4 * h_q.shape[-2] or y_q.shape[-1] != 4 * h_q.shape[-1]:
            raise ShapeError(
                f"latent {tuple(y_q.shape[-2:])} and hyper-latent {tuple(h_q.shape[-2:])} "
                "must have a 4:1 spatial ratio per axis"
            )
        h_dec = self.dec_head(y_q)
        x_anchor = self.dec_tail(h_dec).clamp(0.0, 1.0)
        return x_anchor, h_dec

    # ----------------------------------------------------------------- train
    def forward_train(
        self,
        x: torch.Tensor,
        z0: torch.Tensor | None = None,
        *,
        generator: torch.Generator | None = None,
    ) -> AnchorTrainOutput:
        self._check_image(x)
        h_enc = self.enc_head(x)
        y = self.enc_tail(self._condition(x, h_enc, z0))
        h = self.hyper_enc(y)

        h_noisy = quantize(h, "noise", generator=generator)
        h_ste = quantize(h, "ste")
        y_noisy = quantize(y, "noise", generator=generator)
        y_ste = quantize(y, "ste")

        params = self.entropy_parameters(h_ste)
        rate = estimate_rate(y_noisy, h_noisy, params, image_size=(x.shape[-2], x.shape[-1]))
        h_dec = self.dec_head(y_ste)
        x_anchor = self.dec_tail(h_dec)
        # straight-through clamp keeps gradients at the range edges
        x_anchor = x_anchor + (x_anchor.clamp(0.0, 1.0) - x_anchor).detach()
        return AnchorTrainOutput(x_anchor=x_anchor, h_dec=h_dec, h_enc=h_enc, rate=rate)
