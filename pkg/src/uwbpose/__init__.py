"""Relative 6-DOF pose from inter-robot UWB ranges: estimation, bounds and deployment planning."""

__version__ = "0.1.0"
