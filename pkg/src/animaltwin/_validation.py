"""Input validation helpers for the estimators (sklearn ``check_array`` in spirit).

MISSING is NaN throughout; infinities are always rejected.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateData, LengthMismatch, NotFittedError


def check_matrix(X, *, allow_missing: bool = False, n_features: int | None = None) -> np.ndarray:
    """Return ``X`` as a 2-D float64 array, validating shape and values."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DegenerateData(f"expected a 2-D array, got {X.ndim} dimensions")
    if np.isinf(X).any():
        raise DegenerateData("input contains infinite values")
    if not allow_missing and np.isnan(X).any():
        raise DegenerateData("input contains MISSING values")
    if n_features is not None and X.shape[1] != n_features:
        raise DegenerateData(f"expected {n_features} feature column(s), got {X.shape[1]}")
    return X


def check_vector(y, *, allow_missing: bool = False) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        y = y.reshape(-1)
    if np.isinf(y).any():
        raise DegenerateData("target contains infinite values")
    if not allow_missing and np.isnan(y).any():
        raise DegenerateData("target contains MISSING values")
    return y


def check_X_y(X, y, *, allow_missing: bool = True):
    X = check_matrix(X, allow_missing=allow_missing)
    y = check_vector(y, allow_missing=allow_missing)
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    return X, y


def complete_rows(X: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask of rows with no MISSING entry in ``X`` (and ``y``)."""
    ok = ~np.isnan(X).any(axis=1)
    if y is not None:
        ok &= ~np.isnan(y)
    return ok


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
