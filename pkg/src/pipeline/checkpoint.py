"""
Checkpoint persistence.

A checkpoint is a ``torch.save`` dict::

    {"format_version": 1, "stage": str, "modules": {name: state_dict},
     "config": RunConfig dump, "step": int, "lambda_id": int | None}

Files live under ``run.checkpoint_dir``: ``vae.pt``, ``backbone.pt``,
``stage1_l{id}.pt`` and ``stage2_l{id}.pt``.  Stage checkpoints carry every
module needed for inference, so a single file is enough to decode.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import torch
from torch import nn

from src.config import RunConfig
from src.errors import CheckpointError
from src.pipeline.system import NeficSystem

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
STAGES: tuple[str, ...] = ("vae", "backbone", "stage1", "stage2")


def checkpoint_path(directory: Path, stage: str, lambda_id: int | None = None) -> Path:
    if stage not in STAGES:
        raise CheckpointError(f"unknown stage {stage!r}")
    if stage in ("vae", "backbone"):
        return Path(directory) / f"{stage}.pt"
    if lambda_id is None:
        raise CheckpointError(f"stage {stage!r} checkpoints are per lambda_id")
    return Path(directory) / f"{stage}_l{lambda_id}.pt"


@dataclass
class Checkpoint:
    stage: str
    modules: dict[str, dict[str, torch.Tensor]]
    config: dict[str, Any]
    step: int
    lambda_id: int | None = None
    format_version: int = FORMAT_VERSION

    def run_config(self) -> RunConfig:
        return RunConfig.model_validate(self.config)

    def require(self, *names: str) -> None:
        missing = [n for n in names if n not in self.modules]
        if missing:
            raise CheckpointError(
                f"{self.stage} checkpoint lacks module(s) {', '.join(missing)}"
            )

    def restore(self, name: str, module: nn.Module) -> None:
        self.require(name)
        try:
            module.load_state_dict(self.modules[name])
        except RuntimeError as exc:
            raise CheckpointError(f"cannot restore {name!r}: {exc}") from exc


def save_checkpoint(
    path: Path,
    *,
    stage: str,
    modules: Mapping[str, nn.Module],
    config: RunConfig,
    step: int,
    lambda_id: int | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "modules": {
            name: {k: v.detach().cpu().clone() for k, v in m.state_dict().items()}
            for name, m in modules.items()
        },
        "config": config.to_echo(),
        "step": step,
        "lambda_id": lambda_id,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    logger.info("[checkpoint] %s step=%d -> %s", stage, step, path)
    return path


def load_checkpoint(path: Path, *, expected_stage: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        raw = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("format_version") != FORMAT_VERSION:
        version = raw.get("format_version") if isinstance(raw, dict) else None
        raise CheckpointError(
            f"{path} has format version {version!r}; expected {FORMAT_VERSION}"
        )
    ckpt = Checkpoint(
        stage=raw["stage"],
        modules=raw["modules"],
        config=raw["config"],
        step=raw["step"],
        lambda_id=raw.get("lambda_id"),
    )
    if expected_stage is not None and ckpt.stage != expected_stage:
        raise CheckpointError(f"{path} holds a {ckpt.stage!r} checkpoint, expected {expected_stage!r}")
    return ckpt


# ---------------------------------------------------------------------------
# Whole-system helpers
# ---------------------------------------------------------------------------

def system_modules(system: NeficSystem, stage: str) -> dict[str, nn.Module]:
    """Modules a checkpoint of *stage* carries."""
    if stage == "vae":
        return {"vae": system.vae}
    if stage == "backbone":
        return {"vae": system.vae, "backbone": system.backbone}
    return {
        "vae": system.vae,
        "backbone": system.backbone,
        "codec": system.codec,
        "refiner": system.refiner,
    }


def restore_system(system: NeficSystem, ckpt: Checkpoint) -> None:
    """Load every module *ckpt* carries into *system*, adding LoRA first when needed."""
    if ckpt.stage in ("stage1", "stage2"):
        system.enable_lora()
    for name, module in system_modules(system, ckpt.stage).items():
        ckpt.restore(name, module)


def load_system(path: Path, *, expected_stage: str | None = None) -> tuple[NeficSystem, Checkpoint]:
    """Rebuild a ``NeficSystem`` from a checkpoint using its embedded config."""
    ckpt = load_checkpoint(path, expected_stage=expected_stage)
    system = NeficSystem(ckpt.run_config())
    restore_system(system, ckpt)
    system.eval()
    return system, ckpt
