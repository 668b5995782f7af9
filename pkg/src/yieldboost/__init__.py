"""Gradient-boosted yield regression from remote-sensing time series."""

__version__ = "0.1.0"
