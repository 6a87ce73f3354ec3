"""Segment-based LiDAR place recognition with spatiotemporal second-order pooling."""

__version__ = "0.1.0"
