"""Certainty-guided reasoning: early-exit and budget-forcing controllers for
reasoning language models, plus an evaluation harness."""

__version__ = "0.1.0"
