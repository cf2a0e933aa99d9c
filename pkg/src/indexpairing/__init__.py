"""Desk-scale index pairing workbench for proper groupoid actions."""

__version__ = "0.1.0"
