"""Input validation helpers shared by the estimators and step functions."""
from __future__ import annotations

import numbers

import numpy as np


class NonFiniteInputError(ValueError):
    """Raised when a numeric input contains NaN or infinity."""


def as_vector(value, size: int, name: str = "value") -> np.ndarray:
    """Return ``value`` as a finite float vector of length ``size``."""
    arr = np.asarray(value, dtype=float)
    if arr.shape != (size,):
        arr = arr.reshape(-1)
        if arr.shape != (size,):
            raise ValueError(f"{name} must have {size} elements, got shape {np.shape(value)}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} contains non-finite entries")
    return arr


def as_matrix(value, shape: tuple[int, int], name: str = "value") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} contains non-finite entries")
    return arr


def as_points(value, dim: int, name: str = "points") -> np.ndarray:
    """Return an ``(n, dim)`` float array, promoting a single point to one row."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (n, {dim}), got {np.shape(value)}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} contains non-finite entries")
    return arr


def check_positive(value, name: str, strict: bool = True) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise NonFiniteInputError(f"{name} must be finite")
    if strict and value <= 0.0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0.0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def check_finite_array(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} became non-finite")
    return arr


def readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr
