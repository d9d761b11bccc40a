"""Figures from solver and experiment run directories (CSV/manifest contract only)."""

__version__ = "0.1.0"
