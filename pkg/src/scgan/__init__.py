"""Selfie cartoonization with attentive cycle-consistent adversarial networks."""

from scgan.errors import ScganError

__version__ = "0.1.0"

__all__ = ["ScganError", "__version__"]
