"""Semantic-ID tokenizer with adaptive in-batch overlap regulation."""

__version__ = "0.1.0"
