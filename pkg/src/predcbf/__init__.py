"""Predictive control barrier function synthesis on grids, with a shifted safety filter."""

__version__ = "0.1.0"
