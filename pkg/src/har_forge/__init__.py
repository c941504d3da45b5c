"""Human-activity-recognition pipeline for WISDM-style phone and watch sensor data."""

__version__ = "0.1.0"
