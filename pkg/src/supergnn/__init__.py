"""Superposition diagnostics for small message-passing graph networks."""

__version__ = "0.1.0"
