"""
Training loops.

Four stages run in order, each reading the previous stage's checkpoint::

    vae       per-frame latent autoencoder (reconstruction + KL)
    backbone  base DiT on blurred-to-sharp two-frame denoising (no LoRA)
    stage1    next-frame adaptation: LoRA + prompt + token projection + codec
    stage2    one-step bypass: stage1 set + bypass refiner, optional GAN

``stage1``/``stage2`` checkpoints are per ``loss.lambda_id``.  With
``ablation.skip_stage1`` Stage II starts from the backbone checkpoint.

A metrics CSV row is written every ``run.log_every`` steps and at every
validation pass; rows hold no wall-clock values so a rerun with the same
seed reproduces the file exactly.
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torchvision.transforms.functional import gaussian_blur

from src.config import RunConfig, settings
from src.errors import ConfigurationError, ContractError, DependencyError, ImageReadError
from src.evaluation.metrics import msssim, psnr
from src.generative.diffusion import add_noise, velocity_target
from src.generative.latent_backbone import freeze
from src.health.host_health import assert_host_healthy, check_host_health
from src.pipeline.checkpoint import (
    checkpoint_path,
    load_checkpoint,
    restore_system,
    save_checkpoint,
    system_modules,
)
from src.pipeline.system import NeficSystem
from src.telemetry.metrics import TimingCollector
from src.telemetry.reporter import RunReporter, write_rows
from src.telemetry.timings import time_block
from src.training.data import CropSampler, ImageFolder, validation_batches
from src.training.discriminator import PatchDiscriminator, discriminator_step
from src.training.losses import LossOutput, loss_stage1, loss_stage2, perceptual_proxy

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "step", "stage", "lambda_R",
    "loss_total", "loss_noise", "loss_aux", "loss_rgb", "loss_gan", "rate_bpp",
    "val_bpp", "val_psnr", "val_msssim", "val_proxy",
]

# stage -> the stage whose checkpoint it starts from
PREREQUISITES: dict[str, str | None] = {
    "vae": None,
    "backbone": "vae",
    "stage1": "backbone",
    "stage2": "stage1",
}

ADAMW_BETAS = (0.9, 0.999)
ADAMW_WEIGHT_DECAY = 0.01
_MIN_BLUR_SIGMA = 1e-3


@dataclass
class StageResult:
    stage: str
    checkpoint: Path
    metrics_csv: Path
    rows: list[dict[str, Any]] = field(default_factory=list)
    step: int = 0


# ---------------------------------------------------------------------------
# Setup helpers
# ---------------------------------------------------------------------------

def seed_everything(seed: int) -> torch.Generator:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if settings.num_threads > 0:
        torch.set_num_threads(settings.num_threads)
    return torch.Generator(device=settings.device).manual_seed(seed + 1)


def make_optimizer(params: list[nn.Parameter], lr: float) -> torch.optim.Optimizer:
    return torch.optim.AdamW(params, lr=lr, betas=ADAMW_BETAS, weight_decay=ADAMW_WEIGHT_DECAY)


def trainable_parameters(stage: str, system: NeficSystem) -> list[nn.Parameter]:
    """
    Freeze everything in *system*, then unfreeze and return the parameters
    *stage* updates.  Stage I/II add LoRA adapters when missing.
    """
    for p in system.parameters():
        p.requires_grad_(False)
    if stage == "vae":
        params = list(system.vae.parameters())
    elif stage == "backbone":
        params = list(system.backbone.parameters())
    elif stage in ("stage1", "stage2"):
        system.enable_lora()
        params = list(system.backbone.adaptation_parameters()) + list(system.codec.parameters())
        if stage == "stage2":
            params += list(system.refiner.parameters())
    else:
        raise ConfigurationError(f"unknown stage {stage!r}")
    for p in params:
        p.requires_grad_(True)
    if stage != "vae":
        system.vae.eval()
    return params


def count_trainable(stage: str, config: RunConfig) -> int:
    """Trainable parameter count of *stage* without touching checkpoints."""
    system = NeficSystem(config)
    return sum(p.numel() for p in trainable_parameters(stage, system))


def _prerequisite_path(stage: str, config: RunConfig) -> Path | None:
    ckpt_dir = config.run.checkpoint_dir
    needed = PREREQUISITES[stage]
    if stage == "stage2" and config.ablation.skip_stage1:
        needed = "backbone"
    if needed is None:
        return None
    lambda_id = config.loss.lambda_id if needed in ("stage1", "stage2") else None
    path = checkpoint_path(ckpt_dir, needed, lambda_id)
    if not path.is_file():
        raise DependencyError(
            f"{stage} needs the {needed} checkpoint {path}; run `nefic train {needed}` first",
            missing_stage=needed,
        )
    return path


def _metric_row(stage: str, step: int, config: RunConfig, **values: Any) -> dict[str, Any]:
    row: dict[str, Any] = {c: "" for c in METRIC_COLUMNS}
    row.update(step=step, stage=stage, lambda_R=config.loss.lambda_r if stage.startswith("stage") else "")
    row.update({k: v for k, v in values.items() if k in row})
    return row


def _loss_row(stage: str, step: int, config: RunConfig, out: LossOutput) -> dict[str, Any]:
    c = out.scalars()
    return _metric_row(
        stage, step, config,
        loss_total=float(out.total.detach()),
        loss_noise=c.get("noise", ""),
        loss_aux=c.get("aux", ""),
        loss_rgb=c.get("rgb", ""),
        loss_gan=c.get("gan", ""),
        rate_bpp=c.get("rate", ""),
    )


def _check_finite(out: LossOutput, stage: str, step: int) -> None:
    if not torch.isfinite(out.total):
        raise ContractError(f"[{stage}] non-finite loss at step {step}: {out.scalars()}")


def _maybe_probe_health(step: int) -> None:
    if settings.health_every and step % settings.health_every == 0:
        check_host_health(step)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@torch.no_grad()
def validate(system: NeficSystem, batches: list[torch.Tensor], *, multistep: int = 0, noise_seed: int = 0) -> dict[str, float]:
    """Mean estimated bpp (round mode), PSNR, MS-SSIM and proxy over *batches*."""
    was_training = system.training
    system.eval()
    device = next(system.parameters()).device
    totals = {"val_bpp": 0.0, "val_psnr": 0.0, "val_msssim": 0.0, "val_proxy": 0.0}
    for x in batches:
        x = x.to(device)
        enc = system.encode(x)
        rec = system.reconstruct(enc.y.quantized, enc.h.quantized, multistep=multistep, noise_seed=noise_seed)
        totals["val_bpp"] += float(enc.rate.bpp)
        totals["val_psnr"] += psnr(rec.x_hat, x)
        totals["val_msssim"] += msssim(rec.x_hat, x)
        totals["val_proxy"] += float(perceptual_proxy(system.vae, rec.x_hat, x))
    system.train(was_training)
    return {k: v / len(batches) for k, v in totals.items()}


# ---------------------------------------------------------------------------
# Pre-training
# ---------------------------------------------------------------------------

def vae_loss(system: NeficSystem, x: torch.Tensor, config: RunConfig, generator: torch.Generator | None) -> LossOutput:
    posterior = system.vae.posterior(x)
    x_rec = system.vae.decode_raw(posterior.sample(generator))
    rec = F.mse_loss(x_rec, x)
    kl = posterior.kl()
    weights = {"rgb": 1.0, "kl": config.vae.kl_weight}
    return LossOutput(
        total=rec + weights["kl"] * kl,
        components={"rgb": rec, "kl": kl},
        weights=weights,
    )


def blur_batch(x: torch.Tensor, sigmas: list[float]) -> torch.Tensor:
    out = []
    for img, sigma in zip(x, sigmas):
        if sigma < _MIN_BLUR_SIGMA:
            out.append(img)
            continue
        radius = max(1, math.ceil(3.0 * sigma))
        out.append(gaussian_blur(img, kernel_size=2 * radius + 1, sigma=sigma))
    return torch.stack(out)


def backbone_loss(
    system: NeficSystem,
    x: torch.Tensor,
    config: RunConfig,
    generator: torch.Generator | None,
    *,
    sigma_max: float | None = None,
    uncond_prob: float | None = None,
) -> LossOutput:
    """
    Two-frame denoising: frame 0 is a Gaussian-blurred copy of *x* (σ drawn
    uniformly from ``[0, sigma_max]``), frame 1 the clean image; v-MSE on
    the frame-1 tokens.  With probability *uncond_prob* the anchor latent
    is zeroed per sample.
    """
    vae = system.vae
    if any(p.requires_grad for p in vae.parameters()):
        raise ConfigurationError("backbone pretraining needs a frozen VAE")
    sigma_max = config.backbone.blur_sigma_max if sigma_max is None else sigma_max
    uncond_prob = config.backbone.uncond_prob if uncond_prob is None else uncond_prob
    b = x.shape[0]
    device = x.device

    sigmas = (torch.rand(b, generator=generator, device=device) * sigma_max).tolist()
    with torch.no_grad():
        z0 = vae.encode(x)
        z_anchor = vae.encode(blur_batch(x, sigmas))
    keep = (torch.rand(b, generator=generator, device=device) >= uncond_prob).to(z0.dtype)
    z_anchor = z_anchor * keep.view(-1, 1, 1, 1)

    t = torch.randint(1, system.schedule.timesteps + 1, (b,), generator=generator, device=device)
    eps = torch.randn(z0.shape, generator=generator, device=device, dtype=z0.dtype)
    z_t = add_noise(system.schedule, z0, t, eps)
    v_pred = system.backbone(z_anchor, z_t, t)
    loss = F.mse_loss(v_pred, velocity_target(system.schedule, z0, t, eps))
    return LossOutput(total=loss, components={"noise": loss}, weights={"noise": 1.0})


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------

def _load_folders(config: RunConfig) -> tuple[ImageFolder, list[torch.Tensor]]:
    """An empty or missing data directory is a run-config problem, not an image one."""
    try:
        train = ImageFolder(config.data.train_dir)
        val = ImageFolder(config.data.val_dir, limit=config.data.val_limit)
    except ImageReadError as exc:
        raise ConfigurationError(f"data: {exc}") from exc
    return train, validation_batches(val)


def _prepare_system(stage: str, config: RunConfig) -> NeficSystem:
    system = NeficSystem(config)
    prereq = _prerequisite_path(stage, config)
    if prereq is not None:
        restore_system(system, load_checkpoint(prereq))
    return system.to(settings.device)


def run_stage(stage: str, config: RunConfig) -> StageResult:
    """
    Train *stage* for its configured step count, validating every
    ``run.validate_every`` steps and checkpointing every
    ``run.checkpoint_every`` steps and at the end.

    Raises ``DependencyError`` naming the stage to run first when the
    prerequisite checkpoint is missing.
    """
    if stage not in PREREQUISITES:
        raise ConfigurationError(f"unknown stage {stage!r}; expected one of {tuple(PREREQUISITES)}")
    generator = seed_everything(config.run.seed)
    system = _prepare_system(stage, config)
    params = trainable_parameters(stage, system)
    train_folder, val_batches = _load_folders(config)
    sampler = CropSampler(train_folder, config.data, config.run.seed)

    lambda_id = config.loss.lambda_id if stage.startswith("stage") else None
    out_dir = Path(config.run.output_dir)
    suffix = f"_l{lambda_id}" if lambda_id is not None else ""
    metrics_csv = out_dir / f"metrics_{stage}{suffix}.csv"
    ckpt_path = checkpoint_path(config.run.checkpoint_dir, stage, lambda_id)

    section = {"vae": config.vae, "backbone": config.backbone,
               "stage1": config.stage1, "stage2": config.stage2}[stage]
    steps = section.steps
    optimizer = make_optimizer(params, section.lr)

    disc = disc_opt = None
    if stage == "stage2" and config.ablation.gan_loss:
        disc = PatchDiscriminator(system.vae).to(settings.device)
        disc_opt = make_optimizer(list(disc.head.parameters()), config.stage2.disc_lr)
    val_multistep = config.stage1.val_sample_steps if stage == "stage1" else config.eval.multistep

    collector = TimingCollector()
    rows: list[dict[str, Any]] = []
    assert_host_healthy()
    logger.info(
        "[train] %s: %d steps, %d trainable parameters, lambda_R=%s",
        stage, steps, sum(p.numel() for p in params),
        config.loss.lambda_r if lambda_id is not None else "-",
    )

    def _save(step: int) -> None:
        modules = system_modules(system, stage)
        if disc is not None:
            modules = {**modules, "discriminator": disc}
        save_checkpoint(ckpt_path, stage=stage, modules=modules, config=config,
                        step=step, lambda_id=lambda_id)

    system.train()
    if stage != "vae":
        freeze(system.vae)
    for step in range(1, steps + 1):
        x = sampler.batch().to(settings.device)
        if stage == "stage2" and step == config.stage2.lr_decay_step + 1:
            for group in optimizer.param_groups:
                group["lr"] = config.stage2.lr_final
            logger.info("[train] stage2 lr -> %g at step %d", config.stage2.lr_final, step)

        with time_block("train_step", collector):
            optimizer.zero_grad(set_to_none=True)
            if stage == "vae":
                out = vae_loss(system, x, config, generator)
            elif stage == "backbone":
                out = backbone_loss(system, x, config, generator)
            elif stage == "stage1":
                out = loss_stage1(system, x, config, generator=generator)
            else:
                out = loss_stage2(system, x, config, step=step, discriminator=disc, generator=generator)
            _check_finite(out, stage, step)
            out.total.backward()
            optimizer.step()
            if disc is not None and step >= config.stage2.gan_start_step:
                discriminator_step(disc, disc_opt, x, out.x_hat)

        if step % config.run.log_every == 0 or step == steps:
            row = _loss_row(stage, step, config, out)
            rows.append(row)
            logger.info("[train] %s step=%d loss=%.5f", stage, step, row["loss_total"])
        if stage.startswith("stage") and (step % config.run.validate_every == 0 or step == steps):
            with time_block("validate", collector):
                val = validate(system, val_batches, multistep=val_multistep,
                               noise_seed=config.eval.noise_seed)
            rows.append(_metric_row(stage, step, config, **val))
            logger.info(
                "[train] %s step=%d val bpp=%.4f psnr=%.2f msssim=%.4f proxy=%.5f",
                stage, step, val["val_bpp"], val["val_psnr"], val["val_msssim"], val["val_proxy"],
            )
        if step % config.run.checkpoint_every == 0 and step != steps:
            _save(step)
        _maybe_probe_health(step)

    _save(steps)
    write_rows(metrics_csv, rows, METRIC_COLUMNS)
    RunReporter(
        config.run.name, stage=stage, config=config.to_echo(),
        collector=collector, output_dir=out_dir,
    ).write_report(rows)
    return StageResult(stage=stage, checkpoint=ckpt_path, metrics_csv=metrics_csv, rows=rows, step=steps)
