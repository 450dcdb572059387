"""Instruction-level simulator and energy estimator for an event-driven neuromorphic core."""

__version__ = "0.1.0"
