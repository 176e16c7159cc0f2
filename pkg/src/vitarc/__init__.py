"""Pixel-level encoder-decoder vision transformer for ARC-style grid tasks."""

__version__ = "0.1.0"
