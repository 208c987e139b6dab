"""Saliency-guided grid-wise local self-attention and dual-branch classification."""

__version__ = "0.1.0"
