"""Patch-based switching Kalman filtering for image sequences."""

__version__ = "0.1.0"
