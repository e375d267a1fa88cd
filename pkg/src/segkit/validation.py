"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ConfigError, ShapeMismatch


def check_mask(mask, name="mask"):
    """Return ``mask`` as a C-contiguous 2-D bool array with both extents >= 1."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be at least 1x1, got {arr.shape}")
    if arr.dtype != np.bool_:
        arr = arr != 0
    return np.ascontiguousarray(arr)


def check_image(image, name="image"):
    """Return ``image`` as an (H, W, 3) uint8 array."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be at least 1x1, got {arr.shape}")
    if arr.dtype != np.uint8:
        raise ShapeMismatch(f"{name} must be uint8, got {arr.dtype}")
    return arr


def check_same_shape(a, b, what="masks"):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what} differ in shape: {a.shape} vs {b.shape}")


def check_unit_interval(value, name, path="$"):
    if not isinstance(value, numbers.Real) or not 0.0 <= float(value) <= 1.0:
        raise ConfigError(f"{name} must be in [0, 1], got {value!r}", path)
    return float(value)


def check_positive(value, name, path="$"):
    if not isinstance(value, numbers.Real) or not float(value) > 0.0:
        raise ConfigError(f"{name} must be > 0, got {value!r}", path)
    return float(value)


def check_non_negative(value, name, path="$"):
    if not isinstance(value, numbers.Real) or float(value) < 0.0:
        raise ConfigError(f"{name} must be >= 0, got {value!r}", path)
    return value


def check_range(pair, name, path="$", lower=None):
    """Validate an ordered ``(lo, hi)`` pair and return it as a tuple."""
    try:
        lo, hi = pair
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a (lo, hi) pair, got {pair!r}", path) from None
    if not all(isinstance(v, numbers.Real) for v in (lo, hi)):
        raise ConfigError(f"{name} must hold numbers, got {pair!r}", path)
    if lo > hi:
        raise ConfigError(f"{name} must be ordered, got {pair!r}", path)
    if lower is not None and lo < lower:
        raise ConfigError(f"{name} must be >= {lower}, got {pair!r}", path)
    return (lo, hi)


def check_random_state(seed):
    """Accept an int seed (or None for 0). Generators are derived per sample."""
    if seed is None:
        return 0
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, numbers.Integral) or seed < 0:
        raise ConfigError(f"random_state must be a non-negative integer, got {seed!r}")
    return int(seed)
