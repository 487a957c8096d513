"""Partial exploration of MDPs: learning, verifying and analysing epsilon-cores."""

__version__ = "0.1.0"
