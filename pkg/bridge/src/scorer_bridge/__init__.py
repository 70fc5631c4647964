"""HTTP bridge serving preference scorers with input gradients."""

__version__ = "0.1.0"
