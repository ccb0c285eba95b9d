"""Grouped frame compression for fast compressed-video super-resolution."""

__version__ = "0.1.0"
