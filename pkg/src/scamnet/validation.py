"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .episodic import Dataset, DatasetStore, load_dataset
from .errors import ConfigError, DataError


def check_image_batch(
    X, height: int, width: int, channels: int, name: str = "X"
) -> np.ndarray:
    """Coerce to a finite float32 (n, H, W, C) stack or raise."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != (height, width, channels):
        raise ConfigError(
            f"{name} must have shape (n, {height}, {width}, {channels}), "
            f"got {np.asarray(X).shape}"
        )
    if not np.isfinite(arr).all():
        raise DataError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def check_labels(y, n_expected: int, name: str = "y") -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.shape[0] != n_expected:
        raise ConfigError(f"{name} must be 1-D with {n_expected} entries")
    return arr


def as_split(X, split: str) -> Dataset:
    """Accept a Dataset, a DatasetStore, or a dataset directory path."""
    if isinstance(X, Dataset):
        return X
    if isinstance(X, DatasetStore):
        return X[split]
    if isinstance(X, (str, Path)):
        return load_dataset(X)[split]
    raise ConfigError(
        f"expected a Dataset, DatasetStore, or dataset directory, got {type(X).__name__}"
    )
