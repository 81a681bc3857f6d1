"""Pulse compiler and gate-sequencer simulator for LUT-based control hardware."""

__version__ = "0.1.0"
