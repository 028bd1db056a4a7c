"""Probabilistic attribute embeddings for spoofed speech characterization."""

__version__ = "0.1.0"
