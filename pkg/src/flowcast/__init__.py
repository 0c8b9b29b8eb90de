"""Probabilistic long-horizon forecasting with multiscale contrastive
representations, attention fusion, and conditional normalizing flows."""

__version__ = "0.1.0"
