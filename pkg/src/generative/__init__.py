"""Generative side: latent autoencoder, next-frame DiT and diffusion algebra."""
