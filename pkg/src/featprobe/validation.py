"""Input validation helpers shared by the estimators and file formats."""

from __future__ import annotations

import numpy as np

from .errors import DimMismatchError, NonFiniteValueError


def as_feature_matrix(X) -> np.ndarray:
    """Coerce to a 2-D float32 matrix and reject non-finite values."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError("feature matrix must have at least one column")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("feature matrix contains NaN or Inf")
    return arr


def as_float_matrix(X) -> np.ndarray:
    """Coerce to a 2-D float64 matrix and reject non-finite values."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("matrix contains NaN or Inf")
    return arr


def as_float_vector(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("vector contains NaN or Inf")
    return arr


def as_binary_labels(y, n: int | None = None) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError("labels must be 1-D")
    arr = arr.astype(np.int64)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"expected {n} labels, got {arr.shape[0]}")
    return arr


def both_classes_present(y) -> bool:
    arr = np.asarray(y)
    return arr.size > 0 and bool((arr == 0).any()) and bool((arr == 1).any())


def require_same_dim(width: int, expected: int, what: str = "input") -> None:
    if width != expected:
        raise DimMismatchError(f"{what} has dim {width}, expected {expected}")
