"""Fairness-aware spatiotemporal graph forecasting."""

__version__ = "0.1.0"
