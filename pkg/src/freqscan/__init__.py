"""Frequency-band serialization and causal selective-scan classifiers."""

__version__ = "0.1.0"
