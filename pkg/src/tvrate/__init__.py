"""Trend filtering under misspecified smoothness: kernels, oracles, solvers, experiments."""

__version__ = "0.1.0"
