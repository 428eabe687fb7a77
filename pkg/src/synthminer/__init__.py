"""Batch pipeline turning OCR'd materials papers into a structured synthesis dataset."""

__version__ = "0.1.0"
