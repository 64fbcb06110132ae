"""Detect and repair hardware security bugs in Verilog with code-completion models."""

__version__ = "0.1.0"
