"""Spectral convergence experiments for perforated flat tori."""

__version__ = "0.1.0"
