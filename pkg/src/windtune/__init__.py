"""Iterative NMPC weight tuning on a simulated 6-DOF winding task."""

from windtune.backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
