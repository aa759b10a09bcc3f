"""Adaptive reduced-order models inside MCMC for Darcy-flow inverse problems."""

__version__ = "0.1.0"
