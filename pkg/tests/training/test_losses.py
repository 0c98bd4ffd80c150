"""
Training objective tests.

Requirements asserted:
  • total equals the weighted sum of the logged components
  • lambda_aux = lambda_R = 0 reduces Stage I to the noise term alone
  • an exact velocity oracle drives the noise term to zero
  • autograd gradients of the adapters match central finite differences
  • the GAN term is exactly zero before its start step
"""
from __future__ import annotations

import pytest
import torch

from src.errors import ShapeError
from src.generative.lora import lora_modules
from src.pipeline.system import NeficSystem
from src.training.discriminator import PatchDiscriminator
from src.training.losses import (
    generator_loss,
    hinge_discriminator_loss,
    loss_stage1,
    loss_stage2,
    perceptual_proxy,
)


def _batch(seed: int = 0, n: int = 2) -> torch.Tensor:
    return torch.rand(n, 3, 64, 64, generator=torch.Generator().manual_seed(seed))


class TestPerceptualProxy:

    def test_identical_images_score_zero(self, tiny_system):
        x = _batch()
        with torch.no_grad():
            assert float(perceptual_proxy(tiny_system.vae, x, x)) == 0.0

    def test_symmetric_and_positive(self, tiny_system):
        x, y = _batch(0), _batch(1)
        with torch.no_grad():
            ab = float(perceptual_proxy(tiny_system.vae, x, y))
            ba = float(perceptual_proxy(tiny_system.vae, y, x))
        assert ab > 0
        assert ab == pytest.approx(ba, rel=1e-6)

    def test_shape_mismatch(self, tiny_system):
        with pytest.raises(ShapeError):
            perceptual_proxy(tiny_system.vae, _batch(), torch.rand(2, 3, 32, 64))


class TestAdversarialTerms:

    def test_hinge_at_zero_logits(self):
        zeros = torch.zeros(4, 1, 8, 8)
        assert float(hinge_discriminator_loss(zeros, zeros)) == pytest.approx(2.0)

    def test_hinge_saturates_when_separated(self):
        assert float(hinge_discriminator_loss(torch.full((4,), 2.0), torch.full((4,), -2.0))) == 0.0

    def test_generator_loss_decreases_with_logit(self):
        low = float(generator_loss(torch.full((4,), -1.0)))
        high = float(generator_loss(torch.full((4,), 1.0)))
        assert low > high > 0


class TestStage1:

    def test_total_is_weighted_sum(self, tiny_system, tiny_config):
        tiny_system.enable_lora()
        out = loss_stage1(tiny_system, _batch(), tiny_config, generator=torch.Generator().manual_seed(0))
        assert set(out.components) == {"noise", "aux", "rate"}
        assert out.weights == {"noise": 1.0, "aux": 0.1, "rate": tiny_config.loss.lambda_r}
        assert float(out.total) == pytest.approx(float(out.weighted_sum()), abs=1e-6)

    def test_zero_weights_leave_noise_only(self, tiny_system, tiny_config):
        config = tiny_config.with_overrides(
            {"loss": {"lambda_aux": 0.0, "ladder": [0.0], "lambda_id": 0}}
        )
        out = loss_stage1(tiny_system, _batch(), config, generator=torch.Generator().manual_seed(0))
        assert torch.equal(out.total, out.components["noise"])

    def test_aux_disabled(self, tiny_system, tiny_config):
        config = tiny_config.with_overrides({"ablation": {"aux_loss": False}})
        out = loss_stage1(tiny_system, _batch(), config, generator=torch.Generator().manual_seed(0))
        assert float(out.components["aux"]) == 0.0

    def test_exact_velocity_gives_zero_noise_loss(self, tiny_system, tiny_config, monkeypatch):
        x = _batch()
        schedule = tiny_system.schedule
        with torch.no_grad():
            z0 = tiny_system.vae.encode(x)

        def oracle(z_anchor, z_t, t):
            a, s = schedule.coefficients(t, z_t)
            return (a * z_t - z0) / s

        monkeypatch.setattr(tiny_system.backbone, "forward", oracle)
        out = loss_stage1(tiny_system, x, tiny_config, generator=torch.Generator().manual_seed(0))
        assert float(out.components["noise"]) < 1e-8

    def test_same_generator_same_loss(self, tiny_system, tiny_config):
        a = loss_stage1(tiny_system, _batch(), tiny_config, generator=torch.Generator().manual_seed(4))
        b = loss_stage1(tiny_system, _batch(), tiny_config, generator=torch.Generator().manual_seed(4))
        assert torch.equal(a.total, b.total)

    def test_adapter_gradient_matches_finite_difference(self, tiny_config, randomize):
        torch.manual_seed(0)
        system = NeficSystem(tiny_config)
        system.enable_lora()
        randomize(system.backbone, seed=5, std=0.1)
        system = system.double()
        x = _batch(n=1).double()
        t = torch.tensor([420])
        eps = torch.randn(1, 4, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(6))

        def total() -> torch.Tensor:
            return loss_stage1(
                system, x, tiny_config,
                generator=torch.Generator().manual_seed(7), t=t, eps=eps,
            ).total

        total().backward()
        ups = [m.up for m in lora_modules(system.backbone)]
        target = max(ups, key=lambda p: float(p.grad.abs().max()))
        idx = int(target.grad.abs().argmax())
        analytic = float(target.grad.view(-1)[idx])
        assert abs(analytic) > 0, "Randomised adapters must receive gradient"

        h = 1e-6
        flat = target.data.view(-1)
        with torch.no_grad():
            flat[idx] += h
            plus = float(total())
            flat[idx] -= 2 * h
            minus = float(total())
            flat[idx] += h
        numeric = (plus - minus) / (2 * h)
        assert numeric == pytest.approx(analytic, rel=1e-2), (
            f"autograd {analytic:.6e} vs finite difference {numeric:.6e}; requirement: within 1%"
        )


class TestStage2:

    @pytest.fixture
    def disc(self, tiny_system):
        torch.manual_seed(1)
        return PatchDiscriminator(tiny_system.vae, width=8)

    def test_components_and_reconstruction(self, tiny_system, tiny_config, disc):
        tiny_system.enable_lora()
        x = _batch()
        out = loss_stage2(tiny_system, x, tiny_config, step=0, discriminator=disc,
                          generator=torch.Generator().manual_seed(0))
        assert set(out.components) == {"rgb", "gan", "aux", "rate"}
        assert "gan" not in out.weights, "GAN is folded into rgb, not weighted twice"
        assert out.x_hat.shape == x.shape
        assert out.x_hat.min() >= 0 and out.x_hat.max() <= 1
        assert float(out.total) == pytest.approx(float(out.weighted_sum()), abs=1e-6)

    def test_gan_zero_before_start(self, tiny_system, tiny_config, disc):
        start = tiny_config.stage2.gan_start_step
        assert start > 0
        before = loss_stage2(tiny_system, _batch(), tiny_config, step=start - 1, discriminator=disc,
                             generator=torch.Generator().manual_seed(0))
        after = loss_stage2(tiny_system, _batch(), tiny_config, step=start, discriminator=disc,
                            generator=torch.Generator().manual_seed(0))
        assert float(before.components["gan"]) == 0.0, "GAN term must be exactly zero before start"
        assert float(after.components["gan"]) > 0.0

    def test_gan_disabled(self, tiny_system, tiny_config, disc):
        config = tiny_config.with_overrides({"ablation": {"gan_loss": False}})
        out = loss_stage2(tiny_system, _batch(), config, step=10_000, discriminator=disc,
                          generator=torch.Generator().manual_seed(0))
        assert float(out.components["gan"]) == 0.0

    def test_without_bypass_path(self, tiny_config):
        config = tiny_config.with_overrides({"ablation": {"bypass_refine": False}})
        torch.manual_seed(0)
        system = NeficSystem(config)
        out = loss_stage2(system, _batch(), config, step=0, generator=torch.Generator().manual_seed(0))
        assert torch.isfinite(out.total)

    def test_gradient_reaches_refiner(self, tiny_system, tiny_config, randomize):
        randomize(tiny_system.backbone, seed=2, std=0.05)
        out = loss_stage2(tiny_system, _batch(), tiny_config, step=0,
                          generator=torch.Generator().manual_seed(0))
        out.total.backward()
        grad = tiny_system.refiner.proj_out.weight.grad
        assert grad is not None and float(grad.abs().sum()) > 0
