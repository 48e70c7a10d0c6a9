"""Polarization-guided highlight removal for wrinkled transparent film."""
__version__ = "0.1.0"
