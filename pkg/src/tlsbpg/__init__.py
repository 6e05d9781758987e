"""Transfer learning for state-based potential games on production lines."""

__version__ = "0.1.0"
