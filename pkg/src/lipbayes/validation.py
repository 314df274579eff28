"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_feature_array(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


def check_labels(y, n_classes: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D integer label array, optionally range-checked."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        rounded = np.asarray(y, dtype=np.float64)
        if not np.all(rounded == np.floor(rounded)):
            raise ValueError(f"{name} must hold integer class labels")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValueError(f"{name} contains negative labels")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise ValueError(
            f"{name} contains label {int(y.max())} >= n_classes {n_classes}"
        )
    return y


def check_consistent_length(*arrays) -> int:
    lengths = {len(a) for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent lengths: {sorted(lengths)}")
    return lengths.pop() if lengths else 0
