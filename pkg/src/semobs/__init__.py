"""Semantic observer harness: windowing, VLM backends, debounce and safety gating."""

__version__ = "0.1.0"
