"""Anchor codec: transforms, entropy models, range coder and container."""
