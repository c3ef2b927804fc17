"""Black-box configuration tuning for database-like systems."""

__version__ = "0.1.0"
