"""Distortion metrics, RD curves, BD-rate and frame comparisons."""
