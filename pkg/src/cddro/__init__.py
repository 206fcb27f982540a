"""Two-stage distributionally robust cross-dock door design."""

__version__ = "0.1.0"
