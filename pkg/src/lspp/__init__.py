"""Latent-space path planning."""
