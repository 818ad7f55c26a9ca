"""chainscope: telemetry normalization, step tagging, and chain reconstruction."""

__version__ = "0.1.0"
