"""Byte-level transformer classifiers with a balanced mixed objective."""

__version__ = "0.1.0"
