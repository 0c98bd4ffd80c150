"""Next-frame image codec package root."""
