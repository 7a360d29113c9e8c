"""Shared input-validation helpers.

Everything the optimizer touches is a point (or batch of points) in the
unit hypercube; these helpers coerce and check such inputs consistently.
"""

import numpy as np


class DimensionMismatchError(ValueError):
    """Raised when an input's dimensionality disagrees with the model/table."""


def as_float_array(x, name="x"):
    """Coerce to a float64 ndarray and reject NaN/Inf."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_point(x, dim=None, name="x"):
    """Coerce to a 1-D float vector, optionally checking its length."""
    arr = as_float_array(x, name)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatchError(
            f"{name} has dimension {arr.shape[0]}, expected {dim}"
        )
    return arr


def as_point_batch(X, dim=None, name="X"):
    """Coerce to a 2-D (n, dim) float matrix. A single vector becomes one row."""
    arr = as_float_array(X, name)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatchError(
            f"{name} has dimension {arr.shape[1]}, expected {dim}"
        )
    return arr


def check_unit_box(arr, name="x"):
    """Require every coordinate to lie in [0, 1]."""
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must lie inside the unit hypercube [0, 1]^D")
    return arr


def check_positive(value, name):
    """Require a strictly positive scalar (or array of positives)."""
    if np.any(np.asarray(value) <= 0):
        raise ValueError(f"{name} must be strictly positive, got {value}")
    return value
