"""Forward-only test-time prompt adaptation for CTC sequence models."""

__version__ = "0.1.0"
