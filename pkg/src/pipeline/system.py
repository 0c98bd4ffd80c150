"""
End-to-end wiring of the codec.

``NeficSystem`` owns every network of one trained model and implements the
two directions of the pipeline::

    compress:    x -> z0 = E_vae(x) -> encode_anchor(x, z0, round) -> streams -> container
    decompress:  container -> streams -> decode_anchor -> (x_anchor, h_dec)
                 z_anchor = E_vae(x_anchor); z_bypass = refine(h_dec)
                 z0^ = one-step decode at t*; x^ = D_vae(z0^)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import nn

from src.codec.anchor_codec import AnchorCodec, AnchorEncoding
from src.codec.container import BitstreamContainer
from src.codec.streams import decode_streams, encode_streams
from src.config import RunConfig
from src.generative.bypass import BypassRefiner
from src.generative.diffusion import decode_one_step, make_schedule, sample_multistep
from src.generative.latent_backbone import LatentAutoencoder, vae_decode, vae_encode
from src.generative.nextframe_dit import NextFrameDiT
from src.generative.lora import lora_modules

logger = logging.getLogger(__name__)


@dataclass
class Reconstruction:
    x_hat: torch.Tensor
    x_anchor: torch.Tensor
    z_hat: torch.Tensor
    z_bypass: torch.Tensor | None = None
    x_bypass: torch.Tensor | None = None


class NeficSystem(nn.Module):
    def __init__(self, config: RunConfig) -> None:
        super().__init__()
        m = config.model
        self.config = config
        self.vae = LatentAutoencoder(m.latent_channels)
        self.codec = AnchorCodec(
            latent_channels=m.latent_channels,
            anchor_channels=m.anchor_channels,
            hyper_channels=m.hyper_channels,
            feature_channels=m.feature_channels,
        )
        self.backbone = NextFrameDiT(
            latent_channels=m.latent_channels,
            dim=m.dit_dim,
            heads=m.dit_heads,
            blocks=m.dit_blocks,
            prompt_tokens=m.prompt_tokens,
            timesteps=m.timesteps,
        )
        self.refiner = BypassRefiner(
            feature_channels=m.feature_channels,
            latent_channels=m.latent_channels,
            dim=m.dit_dim,
            heads=m.dit_heads,
            blocks=m.refiner_blocks,
        )
        self.schedule = make_schedule(m.timesteps, m.schedule)
        self.t_star = m.t_star

    # -------------------------------------------------------------- adapters
    @property
    def has_lora(self) -> bool:
        return any(True for _ in lora_modules(self.backbone))

    def enable_lora(self) -> None:
        if not self.has_lora:
            self.backbone.add_lora(self.config.lora.rank, self.config.lora.alpha)

    @property
    def cond_enc(self) -> bool:
        return self.config.ablation.cond_enc

    @property
    def bypass_refine(self) -> bool:
        return self.config.ablation.bypass_refine

    # -------------------------------------------------------------- compress
    @torch.no_grad()
    def encode(self, x: torch.Tensor) -> AnchorEncoding:
        z0 = vae_encode(self.vae, x) if self.cond_enc else None
        return self.codec.encode_anchor(x, z0, "round")

    @torch.no_grad()
    def compress(self, x: torch.Tensor, lambda_id: int) -> BitstreamContainer:
        enc = self.encode(x)
        hyper, latent = encode_streams(self.codec, enc.y.quantized, enc.h.quantized)
        container = BitstreamContainer(
            lambda_id=lambda_id,
            width=x.shape[-1],
            height=x.shape[-2],
            hyper_payload=hyper,
            latent_payload=latent,
        )
        logger.debug(
            "[codec] compressed %dx%d -> %d bytes (%.4f bpp, estimate %.4f)",
            container.width, container.height, container.num_bytes,
            container.bpp, float(enc.rate.bpp),
        )
        return container

    # ------------------------------------------------------------ decompress
    @torch.no_grad()
    def decompress(
        self,
        container: BitstreamContainer,
        *,
        multistep: int = 0,
        noise_seed: int = 0,
    ) -> Reconstruction:
        y_q, h_q = decode_streams(
            self.codec,
            container.hyper_payload,
            container.latent_payload,
            (container.height, container.width),
        )
        return self.reconstruct(y_q, h_q, multistep=multistep, noise_seed=noise_seed)

    @torch.no_grad()
    def reconstruct(
        self,
        y_q: torch.Tensor,
        h_q: torch.Tensor,
        *,
        multistep: int = 0,
        noise_seed: int = 0,
    ) -> Reconstruction:
        """
        Decode quantized latents.  ``multistep > 0`` samples from seeded noise
        with that many DDIM steps; otherwise the one-step decode runs from the
        bypass latent, or from seeded noise at ``t = T`` when the bypass is
        disabled.
        """
        x_anchor, h_dec = self.codec.decode_anchor(y_q, h_q)
        z_anchor = vae_encode(self.vae, x_anchor)
        z_bypass = self.refiner(h_dec)
        if multistep:
            z_hat = sample_multistep(self.backbone, self.schedule, z_anchor, multistep, noise_seed)
        elif self.bypass_refine:
            z_hat = decode_one_step(self.backbone, self.schedule, z_bypass, z_anchor, self.t_star)
        else:
            z_hat = sample_multistep(self.backbone, self.schedule, z_anchor, 1, noise_seed)
        return Reconstruction(
            x_hat=vae_decode(self.vae, z_hat),
            x_anchor=x_anchor,
            z_hat=z_hat,
            z_bypass=z_bypass,
            x_bypass=vae_decode(self.vae, z_bypass),
        )
