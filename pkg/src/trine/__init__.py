"""Nonparametric estimation of state-dependent intrinsic noise from noisy time series."""

__version__ = "0.1.0"
