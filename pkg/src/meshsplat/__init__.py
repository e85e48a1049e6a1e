"""Hybrid mesh + Gaussian-splatting reconstruction and interactive deformation."""

__version__ = "0.1.0"
