"""Streaming inference kit for decoder-only transformers.

Implements group position encoding for simultaneous decoding, the wait-k
read/write policy, a split source/target KV cache, and the batch-style
baselines (interleaved, no-reencode, position-reencode, full-reencode)
used to compare against it.
"""

__version__ = "0.1.0"

from .paradigm import Paradigm
from .rope import RotaryParams

__all__ = ["Paradigm", "RotaryParams", "__version__"]
