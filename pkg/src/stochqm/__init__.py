"""Numerical laboratory for stochastic models of quantum mechanics."""

__version__ = "0.1.0"
