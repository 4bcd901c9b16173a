"""Adaptive and aggressive sample rejection for contamination-robust anomaly detection."""

__version__ = "0.1.0"
