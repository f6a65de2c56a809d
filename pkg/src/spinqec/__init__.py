"""Emulation of spin-qubit surface-code memories under 1/f noise."""

__version__ = "0.1.0"
