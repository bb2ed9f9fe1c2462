"""Deterministic random-stream derivation.

Every source of randomness in the toolkit is derived from one 64-bit master
seed through the splitting rule implemented here: stream ``(seed, ids...)``
maps to ``numpy.random.SeedSequence(seed, spawn_key=ids)``. Two calls with
the same seed and stream ids yield identical generators; distinct stream ids
yield statistically independent streams. Modules therefore never share
generator state.
"""

from __future__ import annotations

import numpy as np

# Stream ids used by the CLI and the end-to-end pipeline. Per-sample streams
# append the sample index, e.g. (STREAM_SCENE, i).
STREAM_PERTURB = 1
STREAM_SCENE = 2
STREAM_WEIGHTS = 3
STREAM_DOWNSAMPLE = 4
STREAM_TOKENS = 5


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return the generator for stream ``(seed, *stream)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(stream)))


def as_rng(seed) -> np.random.Generator:
    """Accept either an integer seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
