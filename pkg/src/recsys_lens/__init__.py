"""Recommender training and diagnostics toolkit."""

__version__ = "0.1.0"
