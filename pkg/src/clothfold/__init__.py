"""Dynamic cloth folding: simulation, control, rendering, and learning."""

__version__ = "0.1.0"
