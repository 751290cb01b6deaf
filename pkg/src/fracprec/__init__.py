"""Operator preconditioning for fractional Laplacian Dirichlet problems."""

__version__ = "0.1.0"
