"""Floorplan reconstruction as polygon-set prediction from density maps."""

__version__ = "0.1.0"
