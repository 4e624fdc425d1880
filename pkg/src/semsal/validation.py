"""Array and scalar validation helpers.

Every public entry point funnels its inputs through these checks so that a
bad shape or a stray NaN fails immediately with a message naming the
offending argument instead of surfacing later as a numpy broadcast error.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def as_float_array(value, name: str, ndim: int | None = None,
                   dtype=np.float64) -> np.ndarray:
    """Convert ``value`` to a floating ndarray, checking rank and finiteness."""
    try:
        arr = np.asarray(value, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: not convertible to a float array: {exc}")
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name}: expected {ndim}-d array, got {arr.ndim}-d "
                              f"with shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def check_map(arr, name: str = "map") -> np.ndarray:
    """Validate a saliency map: 2-d, finite, values in [0, 1]."""
    arr = as_float_array(arr, name, ndim=2)
    if arr.size == 0:
        raise ValidationError(f"{name}: empty map")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise ValidationError(f"{name}: values outside [0, 1] (min {lo}, max {hi})")
    return arr


def check_binary_map(arr, name: str = "mask") -> np.ndarray:
    """Validate a binary mask: 2-d, every value exactly 0 or 1."""
    arr = as_float_array(arr, name, ndim=2)
    if arr.size == 0:
        raise ValidationError(f"{name}: empty mask")
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValidationError(f"{name}: values other than 0/1 present")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"{name_a} shape {a.shape} does not match "
                              f"{name_b} shape {b.shape}")


def check_positive(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name}: must be a positive finite number, got {value}")
    return value


def check_fraction(value, name: str, *, closed_top: bool = True) -> float:
    value = float(value)
    top_ok = value <= 1.0 if closed_top else value < 1.0
    if not np.isfinite(value) or value < 0.0 or not top_ok:
        raise ValidationError(f"{name}: must lie in the unit interval, got {value}")
    return value


def check_index(value, name: str, *, minimum: int = 0) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValidationError(f"{name}: expected an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name}: must be >= {minimum}, got {value}")
    return int(value)
