"""Image-to-structure document parsing: layout analysis followed by element-wise content parsing."""

__version__ = "0.1.0"
