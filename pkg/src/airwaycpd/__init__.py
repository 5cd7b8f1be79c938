"""Bayesian changepoint detection of airway dilatation from area profiles."""

__version__ = "0.1.0"
