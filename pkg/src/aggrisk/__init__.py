"""Aggregate risk analysis: YET x ELT x layer terms -> Year Loss Tables and risk metrics."""

__version__ = "0.1.0"
