"""Deterministic derivation of named RNG streams from one root seed.

Every random decision in the tracker draws from a stream derived as
``derive_seed(root, purpose, *context)`` so reproducibility does not depend
on call order.
"""
from __future__ import annotations

import numpy as np

# purpose tags for pipeline streams
STREAM_INIT = 1
STREAM_REFRESH = 2
STREAM_FALLBACK = 3
# purpose tags for oracle noise
STREAM_JITTER = 11
STREAM_DROPOUT = 12
# purpose tags for scene generation
STREAM_SCENE = 21
STREAM_RENDER = 22
STREAM_PLACEMENT = 23

_MASK64 = (1 << 64) - 1


def derive_seed(root: int, *tags: int) -> int:
    """Derive a 64-bit child seed from a root seed and integer context tags."""
    entropy = [int(root) & _MASK64] + [int(t) & _MASK64 for t in tags]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream(root: int, *tags: int) -> np.random.Generator:
    """A generator for the named stream."""
    return np.random.default_rng(derive_seed(root, *tags))
