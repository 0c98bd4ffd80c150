"""
Acceptance checks against fully trained checkpoints.

Skipped unless NEFIC_ACCEPTANCE_CHECKPOINTS names a directory holding
``stage2_l{id}.pt`` for every lambda in the ladder and
NEFIC_ACCEPTANCE_IMAGES names a folder of held-out 64x64 images.

Requirements asserted:
  • compress -> decompress is deterministic on every held-out image
  • estimated and coded anchor bits agree within 1% + 64 bits
  • at lambda_R = 1.0 the trained system codes at or below 0.25 bpp
  • the final reconstruction beats the anchor frame on the perceptual
    proxy at every lambda, with a strictly positive mean gap
  • the frozen VAE's latent std lies in [0.5, 2.0] for every channel
"""
from __future__ import annotations

import os
from pathlib import Path

import pytest
import torch

from src.codec.container import parse, serialize
from src.config import LAMBDA_LADDER
from src.evaluation.harness import evaluate_ladder
from src.pipeline.checkpoint import checkpoint_path, load_system
from src.pipeline.image_io import list_images, load_image

pytestmark = pytest.mark.acceptance

_CKPT_DIR = os.getenv("NEFIC_ACCEPTANCE_CHECKPOINTS")
_IMAGE_DIR = os.getenv("NEFIC_ACCEPTANCE_IMAGES")

if not (_CKPT_DIR and _IMAGE_DIR):
    pytest.skip(
        "set NEFIC_ACCEPTANCE_CHECKPOINTS and NEFIC_ACCEPTANCE_IMAGES to run acceptance checks",
        allow_module_level=True,
    )

UNIT_LAMBDA_ID = LAMBDA_LADDER.index(1.0)


@pytest.fixture(scope="module")
def checkpoints() -> dict[int, Path]:
    paths = {i: checkpoint_path(Path(_CKPT_DIR), "stage2", i) for i in range(len(LAMBDA_LADDER))}
    missing = [str(p) for p in paths.values() if not p.is_file()]
    if missing:
        pytest.fail(f"missing trained checkpoints: {missing}")
    return paths


@pytest.fixture(scope="module")
def images() -> list[torch.Tensor]:
    return [load_image(p) for p in list_images(Path(_IMAGE_DIR))[:32]]


@pytest.fixture(scope="module")
def evaluated(checkpoints, tmp_path_factory):
    return evaluate_ladder(checkpoints, Path(_IMAGE_DIR), tmp_path_factory.mktemp("acceptance"))


class TestTrainedCodec:

    def test_round_trip_deterministic(self, checkpoints, images):
        system, _ = load_system(checkpoints[UNIT_LAMBDA_ID])
        for x in images[:16]:
            data = serialize(system.compress(x, UNIT_LAMBDA_ID))
            assert data == serialize(system.compress(x, UNIT_LAMBDA_ID))
            a = system.decompress(parse(data))
            b = system.decompress(parse(data))
            assert torch.equal(a.x_hat, b.x_hat)

    def test_rate_estimate_matches_coded_size(self, checkpoints, images):
        system, _ = load_system(checkpoints[UNIT_LAMBDA_ID])
        for x in images:
            estimated = float(system.encode(x).rate.total_bits)
            coded = 8 * sum(system.compress(x, UNIT_LAMBDA_ID).payload_lengths)
            assert abs(coded - estimated) <= 0.01 * estimated + 64, (
                f"estimated {estimated:.0f} bits, coded {coded}"
            )

    def test_unit_lambda_bitrate(self, evaluated):
        rows = [r for r in evaluated.image_rows if r["lambda_id"] == UNIT_LAMBDA_ID]
        mean_bpp = sum(r["bpp"] for r in rows) / len(rows)
        assert mean_bpp <= 0.25, f"mean bpp {mean_bpp:.4f} at lambda_R = 1.0"

    def test_final_frame_beats_anchor_on_proxy(self, evaluated):
        by_lambda: dict[int, dict[str, float]] = {}
        for row in evaluated.frame_table:
            by_lambda.setdefault(row["lambda_id"], {})[row["frame"]] = row["proxy"]
        gaps = []
        for lambda_id, frames in sorted(by_lambda.items()):
            assert frames["final"] <= frames["anchor"], f"lambda_id {lambda_id}: {frames}"
            gaps.append(frames["anchor"] - frames["final"])
        assert sum(gaps) / len(gaps) > 0

    def test_latent_scale_is_normalised(self, checkpoints, images):
        system, _ = load_system(checkpoints[UNIT_LAMBDA_ID])
        with torch.no_grad():
            z = torch.cat([system.vae.encode(x) for x in images])
        std = z.transpose(0, 1).flatten(1).std(dim=1)
        assert ((std >= 0.5) & (std <= 2.0)).all(), f"per-channel latent std {std.tolist()}"
