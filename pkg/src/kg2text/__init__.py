"""Graph-to-text generation with combined global and local graph encoders."""

__version__ = "0.1.0"
