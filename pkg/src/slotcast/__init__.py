"""Next-slot prediction of 5G NR physical-layer control traffic."""

__version__ = "0.1.0"
