"""Input validation helpers for the array-facing estimators."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def check_bit_matrix(X, n_features: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float64 matrix of 0/1 values."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got ndim={X.ndim}")
    if X.size and not np.all((X == 0.0) | (X == 1.0)):
        raise ShapeMismatch("feature matrix must contain only 0/1 values")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeMismatch(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_binary_labels(y, n_samples: int) -> np.ndarray:
    """Coerce to a 1-D float64 vector of 0/1 labels of the given length."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n_samples:
        raise ShapeMismatch(f"expected {n_samples} labels, got {y.shape[0]}")
    if y.size and not np.all((y == 0.0) | (y == 1.0)):
        raise ShapeMismatch("labels must be 0 (benign) or 1 (malicious)")
    return y
