"""Gated relational graph convolution for hostile-post classification."""

__version__ = "0.1.0"

LABELS = ("hostile", "fake", "hate", "defamation", "offensive")
FINE_LABELS = LABELS[1:]
