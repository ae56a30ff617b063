"""Dependency auditing toolkit: SBOM mining, vulnerability matching, analytics."""

from ._native import backend_name

__version__ = "0.1.0"

__all__ = ["__version__", "backend_name"]
