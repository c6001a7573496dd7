"""Shared numeric helpers: validated float64 arrays, matmul, percentile, RNG.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
The helpers here only enforce the shape/finiteness contracts the rest of the
package relies on.
"""

from __future__ import annotations

import math

import numpy as np


class ReactError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(ReactError, ValueError):
    """Operand shapes are incompatible."""

    def __init__(self, message: str, *shapes: tuple[int, ...]) -> None:
        super().__init__(message)
        self.shapes = shapes


class NumericError(ReactError, ArithmeticError):
    """A computation produced non-finite values."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array (copying only if needed)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}", arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}", arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with an explicit shape check."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}",
            a.shape,
            b.shape,
        )
    return a @ b


def percentile(values, p: float) -> float:
    """Nearest-rank percentile.

    Sorts ascending and returns the element at 1-based rank ``ceil(p/100 * n)``.
    No interpolation, so the result is always one of the inputs.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ReactError("percentile of an empty sequence")
    if not (0.0 < p <= 100.0):
        raise ValueError(f"percentile must lie in (0, 100], got {p}")
    n = v.size
    # 90/100*10 is 9.000000000000002 in binary; snap before ceil
    rank = math.ceil(round(p / 100.0 * n, 9))
    rank = min(max(rank, 1), n)
    return float(np.partition(v, rank - 1)[rank - 1])


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical streams for identical seeds on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))
