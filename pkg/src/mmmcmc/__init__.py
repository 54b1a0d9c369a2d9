"""Micro-macro MCMC sampling with on-the-fly pseudo-marginal free-energy estimates."""

__version__ = "0.1.0"
