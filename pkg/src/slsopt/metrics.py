"""Feature-matrix comparison metrics used by simulated users and the harness."""

import numpy as np

from .validation import as_float_array


def masked_mae(a, b, mask):
    """Mean absolute error between two equal-shape feature matrices, restricted
    to unmasked frames.

    Parameters
    ----------
    a, b : array-like, shape (T, F)
        Feature matrices (rows are frames, columns are feature bins).
    mask : boolean array-like, length T
        True marks frames that participate; False frames are dropped entirely.

    Returns
    -------
    float
        Mean of ``|a - b|`` over all unmasked frames and all F columns.
    """
    a = as_float_array(a, "a")
    b = as_float_array(b, "b")
    if a.ndim != 2 or b.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"feature matrices must share a 2-D shape, got {a.shape} and {b.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1 or mask.shape[0] != a.shape[0]:
        raise ValueError(f"mask must have length {a.shape[0]}, got shape {mask.shape}")
    if not mask.any():
        raise ValueError("empty unmasked set: at least one frame must be unmasked")
    return float(np.mean(np.abs(a[mask] - b[mask])))


def sinusoidal_features(x, n_frames=12, n_bins=8):
    """Deterministic smooth map from a point in [0,1]^D to a (n_frames, n_bins)
    feature matrix.  Serves as the built-in renderer stand-in for feature-space
    oracles: distinct points map to distinct matrices, and the map is Lipschitz,
    so ``masked_mae(features(x), features(target))`` is a usable closeness score.
    """
    x = as_float_array(x, "x")
    if x.ndim != 1:
        raise ValueError(f"x must be a 1-D point, got shape {x.shape}")
    d = x.shape[0]
    t = np.arange(1, n_frames + 1)[:, None, None]
    f = np.arange(1, n_bins + 1)[None, :, None]
    k = np.arange(1, d + 1)[None, None, :]
    phases = np.pi * t * f * k / (n_frames * n_bins)
    return np.sin(phases * x[None, None, :]).mean(axis=2)
