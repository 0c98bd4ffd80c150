"""
Latent autoencoder and bypass refiner tests.
"""
from __future__ import annotations

import pytest
import torch

from src.errors import ShapeError
from src.generative.bypass import BypassRefiner, refine_bypass
from src.generative.latent_backbone import LatentAutoencoder, freeze


@pytest.fixture(scope="module")
def vae() -> LatentAutoencoder:
    torch.manual_seed(0)
    return LatentAutoencoder(4).eval()


class TestAutoencoder:

    def test_latent_is_eighth_scale(self, vae):
        x = torch.rand(2, 3, 64, 96)
        with torch.no_grad():
            z = vae.encode(x)
        assert z.shape == (2, 4, 8, 12)

    def test_feature_pyramid(self, vae):
        with torch.no_grad():
            feats = vae.features(torch.rand(1, 3, 64, 64))
        assert [f.shape[-1] for f in feats] == [32, 16, 8]
        assert feats[-1].shape[1] == vae.feature_channels == 64

    def test_encode_is_deterministic(self, vae):
        x = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(vae.encode(x), vae.encode(x))

    def test_frames_are_encoded_independently(self, vae):
        gen = torch.Generator().manual_seed(1)
        a = torch.rand(1, 3, 32, 32, generator=gen)
        b = torch.rand(1, 3, 32, 32, generator=gen)
        with torch.no_grad():
            joint = vae.encode(torch.cat([a, b]))
            alone = vae.encode(a)
        assert torch.allclose(joint[:1], alone, atol=1e-6), "No mixing across the batch axis"

    def test_decode_range(self, vae):
        with torch.no_grad():
            x = vae.decode(torch.randn(1, 4, 4, 4) * 5)
        assert x.shape == (1, 3, 32, 32)
        assert x.min() >= 0 and x.max() <= 1

    def test_posterior_kl_non_negative(self, vae):
        post = vae.posterior(torch.rand(1, 3, 16, 16))
        assert float(post.kl()) >= 0
        sample = post.sample(torch.Generator().manual_seed(0))
        assert sample.shape == post.mean.shape

    def test_size_not_multiple_of_eight(self, vae):
        with pytest.raises(ShapeError):
            vae.encode(torch.rand(1, 3, 30, 32))

    def test_wrong_latent_channels(self, vae):
        with pytest.raises(ShapeError):
            vae.decode(torch.zeros(1, 5, 4, 4))

    def test_freeze(self):
        model = freeze(LatentAutoencoder(4))
        assert not model.training
        assert not any(p.requires_grad for p in model.parameters())


class TestBypassRefiner:

    @pytest.fixture(scope="class")
    def refiner(self):
        torch.manual_seed(0)
        return BypassRefiner(feature_channels=16, latent_channels=4, dim=32, heads=2, blocks=1)

    def test_maps_features_to_latent(self, refiner):
        with torch.no_grad():
            z = refine_bypass(refiner, torch.randn(2, 16, 8, 12))
        assert z.shape == (2, 4, 8, 12)
        assert torch.isfinite(z).all()

    def test_wrong_feature_channels(self, refiner):
        with pytest.raises(ShapeError):
            refiner(torch.randn(1, 15, 8, 8))
