"""Dual-decoder masked auto-encoding for hybrid dense+sparse retrieval."""

__version__ = "0.1.0"
