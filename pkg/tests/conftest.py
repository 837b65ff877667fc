"""Shared fixtures and the finite-difference oracle used across the suite."""

from __future__ import annotations

import numpy as np
import pytest

from scamnet.encoder import EncoderConfig
from scamnet.episodic import SynthConfig, synth_generate


def rel_error(a: float, b: float, floor: float = 1e-6) -> float:
    """Relative error with an absolute floor so zero gradients are comparable."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_difference(loss_fn, params, name: str, index: int, h: float = 1e-4) -> float:
    """Central finite difference of a scalar loss along one coordinate.

    Mutates the parameter in place and restores it; expects float64
    parameters for the quoted accuracy.
    """
    flat = params[name].data.reshape(-1)
    orig = float(flat[index])
    flat[index] = orig + h
    up = float(loss_fn(params).data)
    flat[index] = orig - h
    down = float(loss_fn(params).data)
    flat[index] = orig
    return (up - down) / (2.0 * h)


def sample_coordinates(params, count: int, rng: np.random.Generator):
    """Random (name, flat_index) pairs across a parameter collection."""
    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(count, total), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for pick in picks:
        which = int(np.searchsorted(bounds, pick, side="right"))
        offset = int(pick - (bounds[which - 1] if which else 0))
        out.append((names[which], offset))
    return out


@pytest.fixture(scope="session")
def toy_encoder_config() -> EncoderConfig:
    """Small enough for finite differences, deep enough to exercise attention."""
    return EncoderConfig(
        image_height=8,
        image_width=8,
        channels=1,
        patch_size=4,
        embed_dim=8,
        depth=1,
        heads=2,
        seed=7,
    )


@pytest.fixture(scope="session")
def tiny_store():
    """4-way synthetic data at 8x8 for fast episode-level tests."""
    return synth_generate(
        SynthConfig(
            n_classes=5,
            images_per_class=8,
            height=8,
            width=8,
            channels=1,
            patch_size=4,
            sigma_within=0.3,
            clutter_ratio=0.25,
            seed=11,
        )
    )
