"""
Per-frame latent autoencoder.

Maps ``B x 3 x H x W`` images in [0, 1] to ``B x C_z x H/8 x W/8`` latents
and back.  Encoding returns the posterior mean, so it is deterministic.  The
two frames of the virtual video are encoded independently: there is no
temporal mixing anywhere in this module.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from src.errors import ShapeError


def _act() -> nn.Module:
    return nn.SiLU()


@dataclass
class Posterior:
    mean: torch.Tensor
    logvar: torch.Tensor

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        eps = torch.randn(
            self.mean.shape, generator=generator, device=self.mean.device, dtype=self.mean.dtype
        )
        return self.mean + torch.exp(0.5 * self.logvar) * eps

    def kl(self) -> torch.Tensor:
        return 0.5 * (self.mean.pow(2) + self.logvar.exp() - 1.0 - self.logvar).mean()


class LatentAutoencoder(nn.Module):
    def __init__(self, latent_channels: int = 8, width: tuple[int, int, int] = (32, 64, 64)) -> None:
        super().__init__()
        self.latent_channels = latent_channels
        w1, w2, w3 = width
        self.stem = nn.Sequential(nn.Conv2d(3, w1, 3, padding=1), _act())
        # each stage halves the resolution; their outputs feed the perceptual proxy
        self.stages = nn.ModuleList([
            nn.Sequential(nn.Conv2d(w1, w2, 4, stride=2, padding=1), _act(),
                          nn.Conv2d(w2, w2, 3, padding=1), _act()),
            nn.Sequential(nn.Conv2d(w2, w3, 4, stride=2, padding=1), _act(),
                          nn.Conv2d(w3, w3, 3, padding=1), _act()),
            nn.Sequential(nn.Conv2d(w3, w3, 4, stride=2, padding=1), _act(),
                          nn.Conv2d(w3, w3, 3, padding=1), _act()),
        ])
        self.to_moments = nn.Conv2d(w3, 2 * latent_channels, 1)

        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, w3, 3, padding=1), _act(),
            nn.ConvTranspose2d(w3, w3, 4, stride=2, padding=1), _act(),
            nn.Conv2d(w3, w2, 3, padding=1), _act(),
            nn.ConvTranspose2d(w2, w2, 4, stride=2, padding=1), _act(),
            nn.Conv2d(w2, w1, 3, padding=1), _act(),
            nn.ConvTranspose2d(w1, w1, 4, stride=2, padding=1), _act(),
            nn.Conv2d(w1, 3, 3, padding=1),
        )

    @property
    def feature_channels(self) -> int:
        """Channel width of the 1/8-scale encoder stage."""
        return self.to_moments.in_channels

    # ------------------------------------------------------------------ encode
    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Encoder activations at 1/2, 1/4 and 1/8 scale."""
        self._check_image(x)
        out = []
        tmp = self.stem(x)
        for stage in self.stages:
            tmp = stage(tmp)
            out.append(tmp)
        return out

    def posterior(self, x: torch.Tensor) -> Posterior:
        mean, logvar = self.to_moments(self.features(x)[-1]).chunk(2, dim=1)
        return Posterior(mean=mean, logvar=logvar.clamp(-30.0, 20.0))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.posterior(x).mean

    # ------------------------------------------------------------------ decode
    def decode_raw(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.latent_channels:
            raise ShapeError(
                f"latent must be B x {self.latent_channels} x h x w, got {tuple(z.shape)}"
            )
        return self.decoder(z)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decode_raw(z).clamp(0.0, 1.0)

    def _check_image(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected a B x 3 x H x W image, got {tuple(x.shape)}")
        if x.shape[-2] % 8 or x.shape[-1] % 8:
            raise ShapeError(
                f"image size {x.shape[-2]}x{x.shape[-1]} must be a multiple of 8 on both axes"
            )


def vae_encode(vae: LatentAutoencoder, x: torch.Tensor) -> torch.Tensor:
    return vae.encode(x)


def vae_decode(vae: LatentAutoencoder, z: torch.Tensor) -> torch.Tensor:
    return vae.decode(z)


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module
