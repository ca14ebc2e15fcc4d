"""Variational full-likelihood inference for max-stable models."""

__version__ = "0.1.0"
