"""Lightweight from-scratch CNNs for wafer defect classification."""
__version__ = "0.1.0"
