"""Offline figure rendering for the sampler's CSV artifacts."""

__version__ = "0.1.0"
