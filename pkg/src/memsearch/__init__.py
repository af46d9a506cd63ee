"""Evolutionary search over executable memory programs for LLM agents."""

__version__ = "0.1.0"
