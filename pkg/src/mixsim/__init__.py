"""Mixture transceiver simulator for multi-antenna broadcast channels."""

__version__ = "0.1.0"
