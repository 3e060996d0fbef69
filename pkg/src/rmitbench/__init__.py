"""Paired (RMIT) performance-regression benchmarking with hierarchical bootstrap analysis."""

__version__ = "0.1.0"
