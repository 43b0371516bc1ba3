"""Learned AP-user assignment for cell-free networks."""

__version__ = "0.1.0"
