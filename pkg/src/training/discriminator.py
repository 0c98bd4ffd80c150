"""
Patch discriminator: a small trainable head on the frozen VAE encoder.

The encoder's 1/8-scale activations are the feature backbone; the head is
three convolutions producing one logit per spatial patch.  Only the head is
ever handed to an optimizer.
"""
from __future__ import annotations

import torch
from torch import nn

from src.generative.latent_backbone import LatentAutoencoder, freeze
from src.training.losses import hinge_discriminator_loss


class PatchDiscriminator(nn.Module):
    def __init__(self, vae: LatentAutoencoder, width: int = 64) -> None:
        super().__init__()
        # not a registered submodule: state_dict() and parameters() cover the head only
        self._backbone = (freeze(vae),)
        in_ch = vae.feature_channels
        self.head = nn.Sequential(
            nn.Conv2d(in_ch, width, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, width, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, 1, 1),
        )

    @property
    def backbone(self) -> LatentAutoencoder:
        return self._backbone[0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``B x 1 x H/8 x W/8`` patch logits."""
        return self.head(self.backbone.features(x)[-1])


def discriminator_step(
    disc: PatchDiscriminator,
    optimizer: torch.optim.Optimizer,
    x: torch.Tensor,
    x_hat: torch.Tensor,
) -> float:
    """One hinge-loss update of the head; *x_hat* is detached."""
    disc.head.train()
    optimizer.zero_grad(set_to_none=True)
    loss = hinge_discriminator_loss(disc(x), disc(x_hat.detach()))
    loss.backward()
    optimizer.step()
    return float(loss.detach())
