"""Windowed-attention / selective-scan hybrid vision blocks with a CLI harness."""

__version__ = "0.1.0"
