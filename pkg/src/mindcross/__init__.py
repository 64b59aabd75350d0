"""MindCross cross-subject brain decoding package."""

__version__ = "0.1.0"
