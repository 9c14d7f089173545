"""Finite-environment laboratory for representation meta-learning and its
sample-complexity guarantees."""

__version__ = "0.1.0"
