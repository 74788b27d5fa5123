"""Matrix-product-state simulation of photonic circuits with time-delayed feedback."""

__version__ = "0.1.0"
