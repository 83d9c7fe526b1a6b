"""Evaluated-CMI generalization bounds: estimation, inversion, simulation and checks."""

__version__ = "0.1.0"
