"""Insider-threat classification from per-user-per-day grayscale behavior images."""

__version__ = "0.1.0"
