"""Curriculum RL that explores in a CVAE latent space, then hands control to raw actions."""

__version__ = "1.0.0"
