"""Event-triggered two-layer energy management for clustered community microgrids."""

__version__ = "0.1.0"
