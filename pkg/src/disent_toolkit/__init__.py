"""Disentanglement toolkit - train, evaluate and inspect disentangled VAEs."""

__version__ = "0.1.0"
