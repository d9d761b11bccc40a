"""Chemotaxis PDE with logistic damping and its branching particle approximation."""

__version__ = "0.1.0"
