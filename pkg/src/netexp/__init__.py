"""Design and Fisherian randomization analysis of experiments on networks."""

__version__ = "0.1.0"
