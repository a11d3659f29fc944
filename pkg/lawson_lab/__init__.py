"""Lawson Lab: numerical verification of the minimal Klein bottle in S⁴."""

__version__ = "1.0.0"
