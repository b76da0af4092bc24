"""Numerical laboratory for Orlicz-growth variational problems."""

__version__ = "0.1.0"
