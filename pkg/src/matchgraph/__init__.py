"""Sentence matching with gated graph attention over unified pair graphs."""

__version__ = "0.1.0"
