"""Self-supervised domain adaptation for speaker embeddings, at desk scale."""

__version__ = "0.1.0"
