"""Orbit disintegration, quotient optimal transport and horizontal curvature checks."""

__version__ = "0.3.0"
