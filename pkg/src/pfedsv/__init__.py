"""Seedable simulator for Shapley-value-driven personalized federated learning."""

__version__ = "0.1.0"
