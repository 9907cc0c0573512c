"""Pseudo-likelihood inference and ABC baselines for simulation-based inference."""

__version__ = "0.1.0"
