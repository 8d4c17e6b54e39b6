"""Camera relocalization by matching mesh-vertex descriptors to image-cell embeddings."""

__version__ = "0.1.0"
