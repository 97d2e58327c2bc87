"""Simulation laboratory for the Anderson polymer in a Brownian environment."""

__version__ = "0.1.0"
