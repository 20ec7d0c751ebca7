"""Federated active learning simulator with knowledge-specialized sampling."""

__version__ = "0.1.0"
