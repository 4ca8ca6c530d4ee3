"""Scoring imperfect demonstrations by feasibility and optimality, and weighted imitation."""

__version__ = "0.1.0"
