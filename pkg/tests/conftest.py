"""
Pytest conftest – fixtures and shared configuration for all test suites.

Provides:
  - Marker definitions (smoke, slow, acceptance, perf).
  - ``tiny_config``: a RunConfig with every model dimension shrunk so a
    forward pass over a 64x64 image takes milliseconds.
  - ``image_dirs``: synthetic PNG train / val folders under tmp_path.
  - ``tiny_system``: a seeded NeficSystem built from ``tiny_config``.
  - ``randomize``: re-draws every parameter of a module from a seeded
    normal, so zero-initialised layers (adaLN-Zero, LoRA ``up``) become
    non-trivial in gradient and identity checks.
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np
import pytest
import torch
from PIL import Image
from torch import nn

from src.config import RunConfig, load_run_config
from src.pipeline.checkpoint import checkpoint_path, save_checkpoint, system_modules
from src.pipeline.system import NeficSystem

TINY_MODEL = {
    "latent_channels": 4,
    "anchor_channels": 16,
    "hyper_channels": 8,
    "feature_channels": 16,
    "dit_dim": 32,
    "dit_heads": 2,
    "dit_blocks": 1,
    "refiner_blocks": 1,
    "prompt_tokens": 4,
}


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line(
        "markers",
        "smoke: fast pre-flight check; must pass before any training run",
    )
    config.addinivalue_line(
        "markers",
        "slow: runs a few optimisation steps of a tiny model",
    )
    config.addinivalue_line(
        "markers",
        "acceptance: needs trained checkpoints via NEFIC_ACCEPTANCE_CHECKPOINTS",
    )
    config.addinivalue_line(
        "markers",
        "perf: decode latency profiles",
    )


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def write_png(path: Path, height: int, width: int, seed: int) -> Path:
    """Smooth colour gradients plus mild noise, so crops are not constant."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    img = np.stack(
        [0.5 + 0.4 * np.sin(xx / (7 + 3 * c) + yy / (11 + c) + phase[c]) for c in range(3)],
        axis=-1,
    )
    img += rng.normal(0, 0.03, size=img.shape)
    arr = (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)
    return path


def make_image_dirs(root: Path) -> dict[str, Path]:
    train = root / "train"
    val = root / "val"
    for i in range(3):
        write_png(train / f"train_{i}.png", 128, 128, seed=i)
    for i in range(2):
        write_png(val / f"val_{i}.png", 64, 64, seed=100 + i)
    return {"train": train, "val": val, "root": root}


@pytest.fixture
def image_dirs(tmp_path: Path) -> dict[str, Path]:
    return make_image_dirs(tmp_path)


# ---------------------------------------------------------------------------
# Tiny models
# ---------------------------------------------------------------------------

def make_tiny_config(root: Path, **sections: dict) -> RunConfig:
    """Tiny RunConfig rooted at *root*; *sections* are merged over the defaults."""
    overrides = {
        "run": {
            "name": "tiny",
            "seed": 7,
            "output_dir": str(root / "run"),
            "checkpoint_dir": str(root / "checkpoints"),
            "checkpoint_every": 1000,
            "validate_every": 1000,
            "log_every": 1,
        },
        "data": {
            "train_dir": str(root / "train"),
            "val_dir": str(root / "val"),
            "crop_min": 64,
            "crop_max": 64,
            "batch_size": 1,
            "val_limit": 2,
        },
        "model": TINY_MODEL,
        "lora": {"rank": 2, "alpha": 2.0},
        "vae": {"steps": 2},
        "backbone": {"steps": 2},
        "stage1": {"steps": 2, "val_sample_steps": 2},
        "stage2": {"steps": 4},
    }
    config = load_run_config(overrides=overrides)
    return config.with_overrides(sections) if sections else config


@pytest.fixture
def tiny_config(tmp_path: Path) -> RunConfig:
    return make_tiny_config(tmp_path)


@pytest.fixture
def tiny_system(tiny_config: RunConfig) -> NeficSystem:
    torch.manual_seed(0)
    return NeficSystem(tiny_config).eval()


def _randomize(module: nn.Module, seed: int = 0, std: float = 0.05) -> nn.Module:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)
    return module


@pytest.fixture
def randomize() -> Callable[..., nn.Module]:
    return _randomize


@pytest.fixture
def image_64() -> torch.Tensor:
    gen = torch.Generator().manual_seed(3)
    base = torch.linspace(0, 1, 64)
    grad = (base[None, :] + base[:, None]) / 2
    img = torch.stack([grad, grad.flip(0), grad.flip(1)])[None]
    return (img + 0.05 * torch.rand(img.shape, generator=gen)).clamp(0, 1)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_random_checkpoint(config: RunConfig, lambda_id: int, *, seed: int = 0, stage: str = "stage2") -> Path:
    """An untrained system with adapters, saved where ``run_stage`` would put it."""
    torch.manual_seed(seed)
    system = NeficSystem(config.with_overrides({"loss": {"lambda_id": lambda_id}}))
    system.enable_lora()
    return save_checkpoint(
        checkpoint_path(config.run.checkpoint_dir, stage, lambda_id),
        stage=stage,
        modules=system_modules(system, stage),
        config=system.config,
        step=0,
        lambda_id=lambda_id,
    )
