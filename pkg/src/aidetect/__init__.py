"""Detect AI-generated images with lightweight heads over frozen vision-encoder embeddings."""

__version__ = "0.1.0"
