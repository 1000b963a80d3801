"""Reanalysis AOD bias analysis and CNN correction toolkit."""

__version__ = "0.1.0"
