"""Hierarchical predictive event segmentation from streaming feature vectors."""

__version__ = "0.1.0"
