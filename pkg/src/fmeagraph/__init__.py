"""Ontology-grounded FMEA knowledge graphs with process-aware fault cause ranking."""

__version__ = "0.1.0"
