"""Spatio-temporal aware window attention forecasting, from scratch on numpy."""

__version__ = "0.1.0"
