"""Conditional generative modelling with a CDF-matching fit and a neural
semi-dual entropic OT smoothness regularizer."""

__version__ = "0.1.0"
