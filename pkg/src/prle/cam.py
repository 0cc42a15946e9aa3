"""Grad-CAM maps from activation/gradient tensor pairs."""

import numpy as np


class ShapeMismatchError(ValueError):
    pass


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def compute_cam(features, grads):
    """Raw Grad-CAM map of shape (U, V).

    Each channel is weighted by its spatially averaged gradient; the weighted
    sum of channels is clamped at zero.
    """
    features = np.asarray(features, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if features.ndim != 3 or min(features.shape) < 1:
        raise ShapeMismatchError(f"features must be K x U x V, got {features.shape}")
    if grads.shape != features.shape:
        raise ShapeMismatchError(
            f"grads shape {grads.shape} does not match features shape {features.shape}"
        )
    _check_finite("features", features)
    _check_finite("grads", grads)
    weights = grads.mean(axis=(1, 2))
    cam = np.tensordot(weights, features, axes=(0, 0))
    return np.maximum(cam, 0.0)


def normalize_minmax(cam):
    cam = np.asarray(cam, dtype=np.float64)
    _check_finite("cam", cam)
    lo, hi = cam.min(), cam.max()
    if hi <= lo:
        # constant map carries no localisation information
        return np.zeros_like(cam)
    return (cam - lo) / (hi - lo)


def upsample_nearest(attn, target_h, target_w):
    """Nearest-neighbour enlargement to (target_h, target_w).

    Output pixel (r, c) copies source pixel (floor(r*h/target_h), floor(c*w/target_w)).
    """
    attn = np.asarray(attn, dtype=np.float64)
    h, w = attn.shape
    if target_h < h or target_w < w:
        raise ValueError(f"target {target_h}x{target_w} is smaller than source {h}x{w}")
    rows = (np.arange(target_h) * h) // target_h
    cols = (np.arange(target_w) * w) // target_w
    return attn[np.ix_(rows, cols)]
