"""Isogeometric boundary-element shape optimisation for 3D exterior acoustics."""

__version__ = "0.1.0"
