"""Command-line surface, checkpoints, image I/O and end-to-end wiring."""
