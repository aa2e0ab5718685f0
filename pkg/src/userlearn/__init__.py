"""Model analysts' exploration logs as sequential decision problems."""

__version__ = "0.1.0"
