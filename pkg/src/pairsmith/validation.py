"""Small input-validation helpers shared by the estimator-facing APIs."""

from __future__ import annotations

import numpy as np

__all__ = ["as_float_matrix", "check_pair_matrix", "check_pair_labels", "flatten_images"]


def as_float_matrix(X, n_cols: int, name: str = "X") -> np.ndarray:
    """Coerce to a finite float64 2-d array with the given column count."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != n_cols:
        raise ValueError(f"{name} must be 2-d with {n_cols} columns, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_pair_matrix(X, image_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Split an (n, 2*D) stacked-pair matrix into its two image blocks."""
    arr = as_float_matrix(X, 2 * image_dim, name="pair matrix")
    return arr[:, :image_dim], arr[:, image_dim:]


def check_pair_labels(y, n: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {arr.shape}")
    bad = set(np.unique(arr)) - {-1, 1}
    if bad:
        raise ValueError(f"pair labels must be +1 or -1, found {sorted(bad)}")
    return arr.astype(np.int64)


def flatten_images(images) -> np.ndarray:
    """Stack a list of (S, S) arrays into an (n, S*S) float64 matrix."""
    if len(images) == 0:
        raise ValueError("no images to flatten")
    return np.stack([np.asarray(im, dtype=np.float64).reshape(-1) for im in images])
