"""Two-stage parking slot detection with region-specific multi-scale features."""

__version__ = "0.1.0"
