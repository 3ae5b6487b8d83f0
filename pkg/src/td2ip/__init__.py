"""Decoupled reconstruction/prediction decoding with time-reversed auxiliary training."""

__version__ = "0.1.0"
