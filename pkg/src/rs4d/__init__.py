"""Structured state-space sequence models (S4 / S4D / robust S4D) and a
shallow-decoder field reconstruction pipeline for mobile sensors."""

__version__ = "0.1.0"
