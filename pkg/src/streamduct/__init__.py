"""Streaming speech-translation transducer at desk scale."""

__version__ = "0.1.0"
