"""Interpretable data collaboration analysis with SMOTE-based anchor data."""

__version__ = "0.1.0"
