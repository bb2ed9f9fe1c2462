"""Input validation helpers.

All public entry points funnel array arguments through these checks so that
shape errors surface as :class:`~crosscal.exceptions.ShapeMismatch` with a
message naming the argument, instead of deep numpy broadcasting failures.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeMismatch


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Convert to a float64 ndarray, rejecting non-numeric input."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ShapeMismatch(f"{name}: not convertible to a float array: {exc}") from None
    return arr


def check_points(points, name: str = "points") -> np.ndarray:
    """Validate an (N, 3) coordinate array and return it as float64."""
    arr = as_float_array(points, name)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeMismatch(f"{name}: expected shape (N, 3), got {arr.shape}")
    return arr


def check_coords_2d(coords, name: str = "coords") -> np.ndarray:
    """Validate an (N, 2) coordinate array and return it as float64."""
    arr = as_float_array(coords, name)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeMismatch(f"{name}: expected shape (N, 2), got {arr.shape}")
    return arr


def check_matrix(x, rows: int, cols: int, name: str = "matrix") -> np.ndarray:
    """Validate a fixed-size 2-D array and return it as float64."""
    arr = as_float_array(x, name)
    if arr.shape != (rows, cols):
        raise ShapeMismatch(f"{name}: expected shape ({rows}, {cols}), got {arr.shape}")
    return arr


def check_vector(x, size: int, name: str = "vector") -> np.ndarray:
    """Validate a fixed-length 1-D array and return it as float64."""
    arr = as_float_array(x, name)
    if arr.shape != (size,):
        raise ShapeMismatch(f"{name}: expected shape ({size},), got {arr.shape}")
    return arr


def check_same_rows(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(
            f"{name_a} and {name_b} must have the same number of rows: "
            f"{a.shape[0]} != {b.shape[0]}"
        )


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch(f"{name}: contains non-finite values")
    return arr
