"""percolab: a simulation and verification laboratory for percolation models
with long-range correlations."""

__version__ = "0.1.0"
