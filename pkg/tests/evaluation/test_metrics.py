"""
Distortion metric tests.

Requirements asserted:
  • PSNR from MSE, capped for identical inputs
  • MS-SSIM scale count follows the short side; identical inputs score 1
  • Independent noise scores low; a shared channel permutation changes nothing
"""
from __future__ import annotations

import pytest
import torch

from src.errors import ShapeError
from src.evaluation.metrics import PSNR_CAP_DB, msssim, msssim_levels, psnr


class TestPSNR:

    def test_known_mse(self):
        x = torch.zeros(1, 3, 8, 8)
        assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_identical_images_capped(self):
        x = torch.rand(1, 3, 8, 8)
        assert psnr(x, x) == PSNR_CAP_DB

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 9))


class TestMSSSIM:

    @pytest.mark.parametrize(
        "side, levels",
        [(256, 5), (161, 5), (160, 4), (81, 4), (80, 3), (64, 3), (21, 2), (11, 1)],
    )
    def test_levels(self, side, levels):
        assert msssim_levels(side, side) == levels

    def test_levels_use_short_side(self):
        assert msssim_levels(64, 512) == 3

    def test_too_small(self):
        with pytest.raises(ShapeError):
            msssim_levels(10, 100)

    def test_identical_images_score_one(self, image_64):
        assert msssim(image_64, image_64) == pytest.approx(1.0, abs=1e-5)

    def test_degradation_lowers_score(self, image_64):
        noisy = (image_64 + 0.2 * torch.rand(image_64.shape, generator=torch.Generator().manual_seed(0))).clamp(0, 1)
        score = msssim(image_64, noisy)
        assert 0 < score < 0.99

    def test_unbatched_input(self, image_64):
        assert msssim(image_64[0], image_64[0]) == pytest.approx(1.0, abs=1e-5)

    def test_non_square_crop(self):
        x = torch.rand(1, 3, 64, 128, generator=torch.Generator().manual_seed(1))
        assert msssim(x, x) == pytest.approx(1.0, abs=1e-5)

    def test_independent_noise_scores_low(self):
        a = torch.rand(1, 3, 256, 256, generator=torch.Generator().manual_seed(10))
        b = torch.rand(1, 3, 256, 256, generator=torch.Generator().manual_seed(11))
        assert msssim(a, b) < 0.3, "Unrelated noise images must not look similar"

    def test_same_channel_permutation_leaves_score(self, image_64):
        noisy = (image_64 + 0.1 * torch.rand(image_64.shape, generator=torch.Generator().manual_seed(2))).clamp(0, 1)
        order = [2, 0, 1]
        assert msssim(image_64[:, order], noisy[:, order]) == pytest.approx(msssim(image_64, noisy), rel=1e-5)
