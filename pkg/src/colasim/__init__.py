"""Simulator for communication-censored decentralized consensus optimization."""

__version__ = "0.1.0"
