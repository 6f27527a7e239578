"""Anchor-guided diffusion-bridge trajectory planning with diffusion baselines and a toy driving simulator."""

__version__ = "0.1.0"
