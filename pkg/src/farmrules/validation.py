"""Shared input-validation helpers."""

from __future__ import annotations

import numpy as np

__all__ = ["NotFittedError", "check_matrix", "check_vector", "check_same_length"]


class NotFittedError(RuntimeError):
    """Raised when predict-like methods run before fit."""


def check_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float64 array with at least one row and column."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_vector(y, name: str = "y", allow_empty: bool = False) -> np.ndarray:
    """Coerce to a 1-D float64 array."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_length(a: np.ndarray, b: np.ndarray, names: str = "a, b") -> None:
    if len(a) != len(b):
        raise ValueError(f"length mismatch for {names}: {len(a)} vs {len(b)}")
