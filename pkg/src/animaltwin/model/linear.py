"""Multivariate ordinary least squares with intercept."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin

from .._validation import check_is_fitted, check_matrix, check_X_y, complete_rows
from ..errors import AllRowsIncomplete, InsufficientRows


def solve_least_squares(A: np.ndarray, y: np.ndarray, ridge_epsilon: float) -> tuple[np.ndarray, bool]:
    """Minimise ``||A b - y||`` via Householder QR.

    Falls back to the normal equations with ``ridge_epsilon`` on the diagonal
    when ``A`` is numerically rank-deficient. Returns ``(b, ridge_applied)``.
    """
    Q, R = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(np.float64).eps * (diag.max() if diag.size else 0.0)
    if diag.size and diag.min() > tol:
        return solve_triangular(R, Q.T @ y, lower=False), False
    gram = A.T @ A
    gram[np.diag_indices_from(gram)] += ridge_epsilon
    return np.linalg.solve(gram, A.T @ y), True


class LinearRegression(RegressorMixin, BaseEstimator):
    """Ordinary least squares with intercept.

    Rows containing MISSING in ``X`` or ``y`` are excluded (and counted in
    ``n_excluded_``). A ridge term of ``ridge_epsilon`` is added only when the
    design matrix is rank-deficient; ``ridge_applied_`` records whether it was.
    """

    def __init__(self, ridge_epsilon=1e-8):
        self.ridge_epsilon = ridge_epsilon

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_missing=True)
        ok = complete_rows(X, y)
        if not ok.any():
            raise AllRowsIncomplete("every training row has a MISSING feature or target")
        X, y = X[ok], y[ok]
        n, p = X.shape
        if n < p + 1:
            raise InsufficientRows(f"{n} complete row(s) for {p} feature(s); need at least {p + 1}")
        A = np.column_stack([np.ones(n), X])
        beta, ridge = solve_least_squares(A, y, self.ridge_epsilon)
        self.intercept_ = float(beta[0])
        self.coef_ = np.asarray(beta[1:], dtype=np.float64)
        self.ridge_applied_ = ridge
        self.n_features_in_ = p
        self.n_train_ = n
        self.n_excluded_ = int((~ok).sum())
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_matrix(X, allow_missing=True, n_features=self.n_features_in_)
        # Explicit column loop: a fixed summation order keeps predictions
        # bit-identical however many rows are passed in.
        out = np.full(X.shape[0], self.intercept_)
        for j, c in enumerate(self.coef_):
            out = out + c * X[:, j]
        return out
