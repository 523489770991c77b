"""Personalized lighting from learned resident paths."""

__version__ = "1.0.0"
