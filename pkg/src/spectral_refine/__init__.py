"""Spectral solvers, negative-norm residual estimation and ST-FNO fine-tuning."""

__version__ = "0.1.0"
