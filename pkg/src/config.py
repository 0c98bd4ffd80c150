"""
Codec configuration.

Two layers:

  - ``Settings``: process-level knobs read from environment variables (a
    ``.env`` file is honoured).  Frozen; one module-level instance.
  - ``RunConfig``: the per-run schema (dataset, model sizes, stage
    hyper-parameters, ablation flags) read from a TOML file and validated
    by pydantic.  Validation errors carry dotted field paths.

``NEFIC_SEED`` overrides ``run.seed`` of every loaded RunConfig.
"""
from __future__ import annotations

import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.errors import ConfigurationError

load_dotenv()

# The λ_R ladder; ``lambda_id`` in containers and checkpoints indexes it.
LAMBDA_LADDER: tuple[float, ...] = (5.0, 3.0, 1.7, 1.0, 0.5, 0.25)


@dataclass(frozen=True)
class Settings:
    # -------------------------------------------------------------- runtime
    seed_override: int | None = field(
        default_factory=lambda: (
            int(os.environ["NEFIC_SEED"]) if os.getenv("NEFIC_SEED", "").strip() else None
        )
    )
    device: str = field(
        default_factory=lambda: os.getenv("NEFIC_DEVICE", "cpu").strip()
    )
    num_threads: int = field(
        default_factory=lambda: int(os.getenv("NEFIC_NUM_THREADS", "0"))
    )

    # -------------------------------------------------------------- logging
    log_level: str = field(
        default_factory=lambda: os.getenv("NEFIC_LOG_LEVEL", "INFO").strip().upper()
    )
    health_every: int = field(
        default_factory=lambda: int(os.getenv("NEFIC_HEALTH_EVERY", "200"))
    )

    # ------------------------------------------------------------ artifacts
    artifacts_dir: Path = field(
        default_factory=lambda: Path(os.getenv("NEFIC_ARTIFACTS_DIR", "artifacts"))
    )

    def __post_init__(self) -> None:
        if self.health_every < 0:
            raise ConfigurationError("NEFIC_HEALTH_EVERY must be >= 0")


settings = Settings()


# ===========================================================================
# Run configuration schema
# ===========================================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RunSection(_Section):
    name: str = "default"
    seed: int = 0
    output_dir: Path = Path("runs/default")
    checkpoint_dir: Path = Path("checkpoints")
    checkpoint_every: int = Field(500, gt=0)
    validate_every: int = Field(250, gt=0)
    log_every: int = Field(25, gt=0)


class DataSection(_Section):
    train_dir: Path = Path("data/train")
    val_dir: Path = Path("data/val")
    crop_min: int = Field(64, ge=64)
    crop_max: int = Field(128, ge=64)
    batch_size: int = Field(8, gt=0)
    val_limit: int = Field(32, gt=0)

    @model_validator(mode="after")
    def _crop_range(self) -> "DataSection":
        if self.crop_min > self.crop_max:
            raise ValueError("crop_min must not exceed crop_max")
        if not any(s % 64 == 0 for s in range(self.crop_min, self.crop_max + 1)):
            raise ValueError("[crop_min, crop_max] must contain a multiple of 64")
        return self


class ModelSection(_Section):
    latent_channels: int = Field(8, gt=0)          # C_z
    anchor_channels: int = Field(128, gt=0)        # C_y
    hyper_channels: int = Field(64, gt=0)          # C_h
    feature_channels: int = Field(96, gt=0)        # C_f
    dit_dim: int = Field(128, gt=0)                # D
    dit_heads: int = Field(4, gt=0)
    dit_blocks: int = Field(4, gt=0)
    refiner_blocks: int = Field(2, gt=0)
    prompt_tokens: int = Field(16, gt=0)
    timesteps: int = Field(1000, gt=1)             # T
    schedule: str = "cosine"
    t_star: int = Field(500, gt=0)


class LoraSection(_Section):
    rank: int = Field(8, gt=0)
    alpha: float = Field(8.0, gt=0)


class VaeSection(_Section):
    steps: int = Field(20_000, gt=0)
    lr: float = Field(1e-3, gt=0)
    kl_weight: float = Field(1e-4, ge=0)


class BackboneSection(_Section):
    steps: int = Field(20_000, gt=0)
    lr: float = Field(1e-4, gt=0)
    blur_sigma_max: float = Field(3.0, ge=0)
    uncond_prob: float = Field(0.1, ge=0, le=1)


class Stage1Section(_Section):
    steps: int = Field(2_000, gt=0)
    lr: float = Field(1e-4, gt=0)
    lambda_mse: float = Field(5.0, ge=0)
    lambda_lpips: float = Field(1.0, ge=0)
    val_sample_steps: int = Field(10, gt=0)


class Stage2Section(_Section):
    steps: int = Field(10_000, gt=0)
    lr: float = Field(1e-4, gt=0)
    lr_final: float = Field(1e-5, gt=0)
    lr_decay_at: float = Field(0.9, gt=0, le=1)
    gan_start: float = Field(0.7, ge=0, lt=1)
    lambda_gan: float = Field(1.0, ge=0)
    lambda_mse: float = Field(2.5, ge=0)
    lambda_lpips: float = Field(0.5, ge=0)
    disc_lr: float = Field(1e-4, gt=0)

    @property
    def gan_start_step(self) -> int:
        return int(self.gan_start * self.steps)

    @property
    def lr_decay_step(self) -> int:
        return int(self.lr_decay_at * self.steps)


class LossSection(_Section):
    lambda_aux: float = Field(0.1, ge=0)
    lambda_id: int = Field(3, ge=0)
    ladder: tuple[float, ...] = LAMBDA_LADDER

    @model_validator(mode="after")
    def _lambda_index(self) -> "LossSection":
        if any(v < 0 for v in self.ladder):
            raise ValueError("ladder values must be >= 0")
        if self.lambda_id >= len(self.ladder):
            raise ValueError(
                f"lambda_id {self.lambda_id} outside ladder of {len(self.ladder)} values"
            )
        return self

    @property
    def lambda_r(self) -> float:
        return self.ladder[self.lambda_id]


class AblationSection(_Section):
    cond_enc: bool = True
    bypass_refine: bool = True
    aux_loss: bool = True
    gan_loss: bool = True
    skip_stage1: bool = False


class EvalSection(_Section):
    multistep: int = Field(0, ge=0)    # 0 = one-step decode
    noise_seed: int = 0


class RunConfig(_Section):
    """Resolved configuration for one run (one stage at one λ_R)."""

    run: RunSection = RunSection()
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    lora: LoraSection = LoraSection()
    vae: VaeSection = VaeSection()
    backbone: BackboneSection = BackboneSection()
    stage1: Stage1Section = Stage1Section()
    stage2: Stage2Section = Stage2Section()
    loss: LossSection = LossSection()
    ablation: AblationSection = AblationSection()
    eval: EvalSection = EvalSection()

    @model_validator(mode="after")
    def _schedule(self) -> "RunConfig":
        if self.model.t_star >= self.model.timesteps:
            raise ValueError("model.t_star must be below model.timesteps")
        if self.model.dit_dim % self.model.dit_heads:
            raise ValueError("model.dit_dim must be divisible by model.dit_heads")
        return self

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """Copy with nested *overrides* applied, re-validated."""
        try:
            return self.model_validate(_deep_update(self.model_dump(), overrides))
        except ValidationError as exc:
            raise ConfigurationError(format_validation_error(exc)) from exc

    def to_echo(self) -> dict[str, Any]:
        """JSON-safe dict for embedding in logs, checkpoints and reports."""
        return self.model_dump(mode="json")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_run_config(
    path: Path | None = None,
    overrides: dict[str, Any] | None = None,
    *,
    env: Settings | None = None,
) -> RunConfig:
    """
    Read *path* (TOML), apply *overrides* and the ``NEFIC_SEED`` override,
    and validate.

    Raises ``ConfigurationError`` whose message lists every offending field
    as a dotted path (``stage2.gan_start: ...``).
    """
    env = env or settings
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if overrides:
        raw = _deep_update(raw, overrides)
    if env.seed_override is not None:
        raw = _deep_update(raw, {"run": {"seed": env.seed_override}})
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(format_validation_error(exc)) from exc


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid run config:\n  " + "\n  ".join(lines)


def _deep_update(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_update(merged[key], value)
        else:
            merged[key] = value
    return merged
