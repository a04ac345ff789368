"""Point-cloud mirror symmetry and reconstruction metrics."""

__version__ = "0.1.0"
