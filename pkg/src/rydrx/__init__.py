"""Rydberg-EIT RF receiver simulation and estimation toolkit."""

__version__ = "0.1.0"
