"""Input validation helpers shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .rig import QUAT_TOL


def check_points(X, name: str = "X", allow_empty: bool = True) -> np.ndarray:
    """Return `X` as a finite float64 (N, 3) array."""
    arr = check_array(
        X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
        ensure_min_samples=0 if allow_empty else 1, input_name=name,
    )
    if arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    return arr


def check_quaternions(q, tol: float = QUAT_TOL) -> np.ndarray:
    """Return (K, 4) scalar-first unit quaternions or raise."""
    q = check_array(q, dtype=np.float64, ensure_min_samples=0, input_name="quaternions")
    if q.shape[1] != 4:
        raise ValueError(f"quaternions must have shape (K, 4), got {q.shape}")
    bad = np.abs(np.linalg.norm(q, axis=1) - 1.0) > tol
    if bad.any():
        raise ValueError(f"quaternion {int(np.flatnonzero(bad)[0])} is not unit norm (tol {tol})")
    return q


def check_weight_rows(W, n_points: int) -> np.ndarray:
    W = check_array(W, dtype=np.float64, ensure_min_samples=0, input_name="weights")
    if W.shape[0] != n_points:
        raise ValueError(f"weights have {W.shape[0]} rows for {n_points} points")
    return W
