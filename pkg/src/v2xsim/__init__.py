"""Deterministic discrete-event simulator for 5.9 GHz V2X access technologies."""

__version__ = "0.1.0"
