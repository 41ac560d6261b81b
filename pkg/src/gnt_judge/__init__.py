"""Batch harness that uses chat-completion models as judges of gender-neutral translation."""

__version__ = "0.1.0"
