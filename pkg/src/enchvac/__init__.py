"""Encrypted model-free event-triggered HVAC control toolkit."""

__version__ = "0.1.0"
