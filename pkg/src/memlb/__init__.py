"""Executable adversarial constructions for memory-constrained convex optimization and feasibility."""

__version__ = "0.1.0"
