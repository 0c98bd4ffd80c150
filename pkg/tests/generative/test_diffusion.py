"""
Diffusion algebra and sampler tests.

Requirements asserted:
  • alpha_t^2 + sigma_t^2 = 1 on the whole grid; alpha = sigma at t = T/2
  • v-prediction inversion recovers z0 and eps to float64 precision
  • DDIM with an exact velocity oracle returns z0 for any step count
  • N-step sampling issues exactly N backbone forwards, one-step decode one
"""
from __future__ import annotations

import pytest
import torch

from src.errors import ConfigurationError, ShapeError
from src.generative.diffusion import (
    add_noise,
    decode_one_step,
    initial_noise,
    make_schedule,
    predict_eps,
    predict_z0,
    sample_multistep,
    timestep_grid,
    velocity_target,
)


@pytest.fixture(scope="module")
def schedule():
    return make_schedule(1000, "cosine")


class OracleVelocity:
    """Returns the exact v for a known clean latent; counts its calls."""

    def __init__(self, schedule, z0: torch.Tensor) -> None:
        self.schedule = schedule
        self.z0 = z0
        self.calls = 0
        self.timesteps: list[int] = []

    def __call__(self, z_anchor, z_t, t):
        self.calls += 1
        self.timesteps.append(int(t))
        a, s = self.schedule.coefficients(t, z_t)
        eps = (z_t - a * self.z0) / s
        return a * eps - s * self.z0


class TestSchedule:

    def test_unit_norm(self, schedule):
        norm = schedule.alpha ** 2 + schedule.sigma ** 2
        assert torch.allclose(norm, torch.ones_like(norm), atol=1e-12)

    def test_endpoints_and_midpoint(self, schedule):
        assert schedule.alpha[0] == 1 and schedule.sigma[0] == 0
        assert schedule.alpha[-1] == 0 and schedule.sigma[-1] == 1
        assert float(schedule.alpha[500]) == pytest.approx(float(schedule.sigma[500]), abs=1e-12)

    def test_monotone(self, schedule):
        assert (schedule.alpha.diff() < 0).all()
        assert (schedule.sigma.diff() > 0).all()

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            make_schedule(1000, "linear")

    def test_timestep_out_of_range(self, schedule):
        with pytest.raises(ConfigurationError):
            schedule.coefficients(1001, torch.zeros(1))
        with pytest.raises(ConfigurationError):
            schedule.coefficients(-1, torch.zeros(1))


class TestVelocityAlgebra:

    def test_inversion_identity_on_random_triples(self, schedule):
        gen = torch.Generator().manual_seed(0)
        z0 = torch.randn(1000, 4, dtype=torch.float64, generator=gen)
        eps = torch.randn(1000, 4, dtype=torch.float64, generator=gen)
        t = torch.randint(0, 1001, (1000,), generator=gen)
        z_t = add_noise(schedule, z0, t, eps)
        v = velocity_target(schedule, z0, t, eps)
        assert torch.allclose(predict_z0(schedule, z_t, v, t), z0, atol=1e-10)
        assert torch.allclose(predict_eps(schedule, z_t, v, t), eps, atol=1e-10)

    def test_noise_shape_mismatch(self, schedule):
        with pytest.raises(ShapeError):
            add_noise(schedule, torch.zeros(1, 4), 10, torch.zeros(1, 5))


class TestGrid:

    @pytest.mark.parametrize(
        "steps, expected",
        [
            (1, [1000, 0]),
            (4, [1000, 750, 500, 250, 0]),
            (3, [1000, 667, 333, 0]),
        ],
    )
    def test_grid_values(self, steps, expected):
        assert timestep_grid(1000, steps) == expected

    def test_grid_strictly_descending_at_max_steps(self):
        grid = timestep_grid(1000, 1000)
        assert grid == list(range(1000, -1, -1))

    @pytest.mark.parametrize("steps", [0, 1001])
    def test_steps_out_of_range(self, steps):
        with pytest.raises(ConfigurationError):
            timestep_grid(1000, steps)


class TestSamplers:

    @pytest.fixture(scope="class")
    def z0(self):
        return torch.randn(1, 4, 6, 6, dtype=torch.float64, generator=torch.Generator().manual_seed(1))

    @pytest.mark.parametrize("steps", [1, 10, 50])
    def test_oracle_multistep_recovers_z0(self, schedule, z0, steps):
        oracle = OracleVelocity(schedule, z0)
        out = sample_multistep(oracle, schedule, torch.zeros_like(z0), steps, seed=3)
        assert oracle.calls == steps, f"{steps}-step sampling must call the backbone {steps} times"
        assert oracle.timesteps == timestep_grid(1000, steps)[:-1]
        assert torch.allclose(out, z0, atol=1e-8)

    def test_oracle_one_step_recovers_z0(self, schedule, z0):
        oracle = OracleVelocity(schedule, z0)
        eps = torch.randn_like(z0)
        z_bypass = add_noise(schedule, z0, 500, eps)
        out = decode_one_step(oracle, schedule, z_bypass, torch.zeros_like(z0), 500)
        assert oracle.calls == 1, "One-step decode must issue exactly one forward"
        assert oracle.timesteps == [500]
        assert torch.allclose(out, z0, atol=1e-10)

    def test_initial_noise_is_seeded(self):
        a = initial_noise((2, 3), 7)
        b = initial_noise((2, 3), 7)
        c = initial_noise((2, 3), 8)
        assert torch.equal(a, b) and not torch.equal(a, c)

    def test_explicit_noise_overrides_seed(self, schedule, z0):
        seen = []

        def first_state(z_anchor, z_t, t):
            seen.append(z_t.clone())
            return torch.zeros_like(z_t)

        noise = torch.full_like(z0, 0.25)
        sample_multistep(first_state, schedule, z0, 1, seed=0, noise=noise)
        assert torch.equal(seen[0], noise)
