"""Deterministic random number generation.

All randomness flows through Philox4x64 counter-based generators with
explicit integer keys, so weight initialization and episode sampling
reproduce bit-exactly across runs and platforms.
"""

from __future__ import annotations

import numpy as np

# Stream ids keep independent uses of the same seed decorrelated.
STREAM_INIT = 0
STREAM_TRAIN_EPISODES = 1
STREAM_EVAL_EPISODES = 2
STREAM_SYNTH = 3
STREAM_DUMP = 4


def make_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, stream)."""
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    )


def episode_generator(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent per-episode generator, stable under parallel evaluation."""
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, (stream << 32) + index], dtype=np.uint64))
    )


def truncated_normal(
    gen: np.random.Generator, shape, std: float = 0.02, dtype=np.float32
) -> np.ndarray:
    """Normal(0, std) with samples beyond 2 std redrawn (rejection sampling)."""
    out = gen.standard_normal(size=shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = gen.standard_normal(size=int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)
