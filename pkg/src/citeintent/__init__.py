"""Prompt-based citation intent classification with knowledge-expanded verbalizers."""

__version__ = "0.1.0"
