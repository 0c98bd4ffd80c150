"""Losses, discriminator, data sampling and the training loops."""
