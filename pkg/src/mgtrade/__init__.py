"""Adaptive-memory minority-game sign prediction and its trading evaluation."""

__version__ = "0.1.0"
