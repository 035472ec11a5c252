"""Solver and verification harness for a viscous Cahn-Hilliard tumour-growth system."""

__version__ = "0.1.0"
