"""Chaotic-system simulation, chaos diagnostics and neural-network chaos control."""

__version__ = "0.1.0"
