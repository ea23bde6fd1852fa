"""Synthetic DAS traffic pipeline: waterfalls, framing, datasets, CNN classifiers."""

__version__ = "0.1.0"
