"""Event-based multimodal underwater networking stack."""

__version__ = "0.1.0"
