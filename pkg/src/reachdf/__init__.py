"""Reachability-based signed distances for serial arms."""

__version__ = "0.1.0"
