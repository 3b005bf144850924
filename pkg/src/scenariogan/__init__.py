"""Conditional WGAN-GP scenario generation for data-center sensor telemetry."""

__version__ = "0.1.0"
