"""Parallel reservoir-computing forecasts of network dynamics."""

__version__ = "0.1.0"
