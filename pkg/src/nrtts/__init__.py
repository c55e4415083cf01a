"""Desk-scale noise-robust zero-shot TTS with adapter-tuned SSL embeddings."""

__version__ = "0.1.0"
