"""Dense matrix helpers, batch statistics, and simplex utilities.

All matrices are 2-D float64 numpy arrays in row-major (C) order. Whenever a
matrix is flattened into a vector anywhere in this package, the flattening is
row-major, so gradient stacking downstream is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

# Cap on the number of grid points simplex_grid will materialize (~2e7 rows
# is a few hundred MB; beyond that the caller almost certainly made a
# step/dimension mistake).
_GRID_ROW_LIMIT = 20_000_000


def new_rng(seed) -> np.random.Generator:
    """Seeded generator; same seed gives bitwise-identical streams."""
    return np.random.default_rng(seed)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous 2-D float64 array, rejecting non-finite data."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class BatchStats:
    """Per-dimension mean and floored diagonal variance of a batch."""

    mean: np.ndarray
    diag_var: np.ndarray


def batch_mean(r: np.ndarray) -> np.ndarray:
    """Column-wise arithmetic mean of an N x d matrix."""
    r = as_matrix(r)
    if r.shape[0] < 1:
        raise ValueError("empty batch")
    return r.mean(axis=0)


def diag_variance(r: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Unbiased per-dimension variance (divisor N-1), clamped below by floor.

    The floor keeps log-variance terms finite when a dimension collapses.
    """
    r = as_matrix(r)
    n = r.shape[0]
    if n < 2:
        raise ValueError("variance undefined for fewer than 2 rows")
    var = r.var(axis=0, ddof=1)
    return np.maximum(var, floor)


def batch_stats(r: np.ndarray, floor: float) -> BatchStats:
    return BatchStats(mean=batch_mean(r), diag_var=diag_variance(r, floor))


def covariance_matrix(r: np.ndarray) -> np.ndarray:
    """Centered covariance with divisor N-1, symmetrized exactly."""
    r = as_matrix(r)
    n = r.shape[0]
    if n < 2:
        raise ValueError("covariance undefined for fewer than 2 rows")
    centered = r - r.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    return (cov + cov.T) / 2.0


def frob_sq_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Frobenius distance sum_ij (a_ij - b_ij)^2."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))


def simplex_grid(m: int, step: float) -> np.ndarray:
    """All length-m nonnegative vectors with entries multiple of `step`
    summing to 1, as a (count, m) array.

    Requires 1/step to be integral; count is C(k+m-1, m-1) for k = 1/step.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not (0.0 < step <= 1.0):
        raise ValueError("step must be in (0, 1]")
    k = round(1.0 / step)
    if abs(k * step - 1.0) > 1e-9:
        raise ValueError(f"1/step must be integral, got step={step}")
    n_rows = comb(k + m - 1, m - 1)
    if n_rows > _GRID_ROW_LIMIT:
        raise ValueError(
            f"grid of {n_rows} points exceeds limit {_GRID_ROW_LIMIT}; "
            "use a coarser step or lower dimension"
        )
    counts = _compositions(k, m)
    return counts.astype(np.float64) * step


def _compositions(k: int, m: int) -> np.ndarray:
    """Integer compositions of k into m nonnegative parts, shape (count, m)."""
    if m == 1:
        return np.array([[k]], dtype=np.int64)
    if m == 2:
        lead = np.arange(k + 1, dtype=np.int64)
        return np.column_stack([lead, k - lead])
    blocks = []
    for lead in range(k + 1):
        tail = _compositions(k - lead, m - 1)
        head = np.full((tail.shape[0], 1), lead, dtype=np.int64)
        blocks.append(np.hstack([head, tail]))
    return np.vstack(blocks)
