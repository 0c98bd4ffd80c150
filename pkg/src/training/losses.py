"""
Training objectives.

Stage I   total = L_noise + lambda_aux * L_aux + lambda_R * R
Stage II  total = L_RGB   + lambda_aux * L_aux + lambda_R * R

with ``L_aux = 5 * MSE(x_anchor, x) + 1 * proxy(x_anchor, x)`` in both
stages and ``L_RGB = lambda_GAN * L_GAN + lambda_MSE * MSE + lambda_LPIPS *
proxy`` on the final reconstruction.  ``R`` is the estimated bits per pixel.

Every loss returns a ``LossOutput`` whose ``total`` equals the weighted sum
of its components; the training loop logs the components unweighted.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from src.config import RunConfig
from src.errors import ShapeError
from src.generative.diffusion import add_noise, decode_one_step, predict_z0
from src.generative.latent_backbone import LatentAutoencoder

logger = logging.getLogger(__name__)

COMPONENTS: tuple[str, ...] = ("noise", "aux", "rgb", "gan", "rate")


@dataclass
class LossOutput:
    total: torch.Tensor
    components: dict[str, torch.Tensor]
    weights: dict[str, float]
    x_hat: torch.Tensor | None = field(default=None, repr=False)

    def weighted_sum(self) -> torch.Tensor:
        total = torch.zeros((), dtype=self.total.dtype, device=self.total.device)
        for name, value in self.components.items():
            total = total + self.weights.get(name, 0.0) * value
        return total

    def scalars(self) -> dict[str, float]:
        return {name: float(v.detach()) for name, v in self.components.items()}


# ---------------------------------------------------------------------------
# Perceptual proxy
# ---------------------------------------------------------------------------

def perceptual_proxy(vae: LatentAutoencoder, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """
    Mean squared distance between the VAE encoder's stage activations of
    *x* and *y*, averaged over the stages.  Gradients flow into the images;
    the VAE is expected to be frozen by the caller.
    """
    if x.shape != y.shape:
        raise ShapeError(f"proxy inputs differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")
    fx = vae.features(x)
    fy = vae.features(y)
    per_stage = [F.mse_loss(a, b) for a, b in zip(fx, fy)]
    return torch.stack(per_stage).mean()


def anchor_loss(
    vae: LatentAutoencoder,
    x_anchor: torch.Tensor,
    x: torch.Tensor,
    *,
    lambda_mse: float,
    lambda_lpips: float,
) -> torch.Tensor:
    return lambda_mse * F.mse_loss(x_anchor, x) + lambda_lpips * perceptual_proxy(vae, x_anchor, x)


# ---------------------------------------------------------------------------
# Adversarial terms
# ---------------------------------------------------------------------------

def generator_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss, ``-log sigmoid(D(x_hat))``."""
    return F.softplus(-fake_logits).mean()


def hinge_discriminator_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()


# ---------------------------------------------------------------------------
# Stage objectives
# ---------------------------------------------------------------------------

def _sample_noise(
    z0: torch.Tensor, timesteps: int, generator: torch.Generator | None
) -> tuple[torch.Tensor, torch.Tensor]:
    t = torch.randint(1, timesteps + 1, (z0.shape[0],), generator=generator, device=z0.device)
    eps = torch.randn(z0.shape, generator=generator, device=z0.device, dtype=z0.dtype)
    return t, eps


def loss_stage1(
    system,
    x: torch.Tensor,
    config: RunConfig,
    *,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    eps: torch.Tensor | None = None,
) -> LossOutput:
    """
    Next-frame adaptation loss.  The codec runs with quantization proxies,
    the anchor frame is re-encoded by the VAE and the backbone predicts the
    clean target latent from a noised copy of ``z0 = E(x)``.

    *t* and *eps* may be pinned for gradient checks.
    """
    vae = system.vae
    with torch.no_grad():
        z0 = vae.encode(x)
    out = system.codec.forward_train(x, z0 if system.cond_enc else None, generator=generator)
    z_anchor = vae.encode(out.x_anchor)

    if t is None or eps is None:
        t_s, eps_s = _sample_noise(z0, system.schedule.timesteps, generator)
        t = t_s if t is None else t
        eps = eps_s if eps is None else eps
    z_t = add_noise(system.schedule, z0, t, eps)
    v = system.backbone(z_anchor, z_t, t)
    z0_hat = predict_z0(system.schedule, z_t, v, t)

    noise = F.mse_loss(z0_hat, z0)
    if config.ablation.aux_loss:
        aux = anchor_loss(
            vae, out.x_anchor, x,
            lambda_mse=config.stage1.lambda_mse, lambda_lpips=config.stage1.lambda_lpips,
        )
    else:
        aux = torch.zeros((), dtype=noise.dtype, device=noise.device)
    rate = out.rate.bpp

    weights = {"noise": 1.0, "aux": config.loss.lambda_aux, "rate": config.loss.lambda_r}
    components = {"noise": noise, "aux": aux, "rate": rate}
    total = noise + weights["aux"] * aux + weights["rate"] * rate
    return LossOutput(total=total, components=components, weights=weights)


def loss_stage2(
    system,
    x: torch.Tensor,
    config: RunConfig,
    *,
    step: int,
    discriminator=None,
    generator: torch.Generator | None = None,
) -> LossOutput:
    """
    One-step bypass loss on the full pipeline output.  The GAN term is
    exactly zero before ``stage2.gan_start_step`` or when disabled.
    """
    vae = system.vae
    s2 = config.stage2
    z0 = None
    if system.cond_enc:
        with torch.no_grad():
            z0 = vae.encode(x)
    out = system.codec.forward_train(x, z0, generator=generator)
    z_anchor = vae.encode(out.x_anchor)
    if system.bypass_refine:
        z_start = system.refiner(out.h_dec)
        z_hat = decode_one_step(system.backbone, system.schedule, z_start, z_anchor, system.t_star)
    else:
        z_start = torch.randn(z_anchor.shape, generator=generator, device=z_anchor.device, dtype=z_anchor.dtype)
        z_hat = decode_one_step(
            system.backbone, system.schedule, z_start, z_anchor, system.schedule.timesteps
        )
    x_hat = vae.decode_raw(z_hat)
    x_hat = x_hat + (x_hat.clamp(0.0, 1.0) - x_hat).detach()

    mse = F.mse_loss(x_hat, x)
    proxy = perceptual_proxy(vae, x_hat, x)
    use_gan = config.ablation.gan_loss and discriminator is not None and step >= s2.gan_start_step
    if use_gan:
        gan = generator_loss(discriminator(x_hat))
    else:
        gan = torch.zeros((), dtype=mse.dtype, device=mse.device)
    rgb = s2.lambda_gan * gan + s2.lambda_mse * mse + s2.lambda_lpips * proxy

    if config.ablation.aux_loss:
        aux = anchor_loss(
            vae, out.x_anchor, x,
            lambda_mse=config.stage1.lambda_mse, lambda_lpips=config.stage1.lambda_lpips,
        )
    else:
        aux = torch.zeros((), dtype=mse.dtype, device=mse.device)
    rate = out.rate.bpp

    weights = {"rgb": 1.0, "aux": config.loss.lambda_aux, "rate": config.loss.lambda_r}
    components = {"rgb": rgb, "gan": gan, "aux": aux, "rate": rate}
    total = rgb + weights["aux"] * aux + weights["rate"] * rate
    return LossOutput(total=total, components=components, weights=weights, x_hat=x_hat)
