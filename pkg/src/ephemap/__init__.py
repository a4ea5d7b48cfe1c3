"""Lifelong LiDAR mapping with two-stage ephemerality."""

__version__ = "0.1.0"
