"""Vertically federated gradient boosting with null-space masking and LDP."""

__version__ = "0.1.0"
