"""Lidar-only vehicle detection and multi-hypothesis tracking."""
__version__ = "0.1.0"
