"""Beam-space dictionary beamforming with a Taylor-recursion enhancement model."""

__version__ = "0.1.0"
