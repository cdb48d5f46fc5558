"""Learned joint coding of event-camera data as a single polarized point cloud."""

__version__ = "0.1.0"
