"""Thomas-Fermi and pseudo-relativistic hydrogenic toolkit for heavy-atom energetics."""

__version__ = "0.1.0"
