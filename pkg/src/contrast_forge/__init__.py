"""Text-to-3D human generation with contrastive preference guidance."""

__version__ = "0.1.0"
