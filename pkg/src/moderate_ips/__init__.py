"""Moderately interacting particle systems with environmental noise."""

__version__ = "0.1.0"
