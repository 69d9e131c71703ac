"""Curate raw videos into a manifest of camera-motion clips with MAG sampling plans."""

__version__ = "0.1.0"
