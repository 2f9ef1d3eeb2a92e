"""Explainable soft evaluation of arc fault diagnosis models."""

__version__ = "0.1.0"
