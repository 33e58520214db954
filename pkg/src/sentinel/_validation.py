"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.exceptions import NotFittedError


def check_binary_matrix(X, n_features=None, name="X"):
    """Return ``X`` as a float64 CSR matrix with entries in {0, 1}.

    Accepts dense arrays, any scipy sparse format, or a
    :class:`~sentinel.features.LabeledDataset`.
    """
    if hasattr(X, "to_csr"):
        X = X.to_csr()
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
        X.sum_duplicates()
        X.eliminate_zeros()
        values = X.data
    else:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2:
            raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
        values = X.ravel()
        X = sp.csr_matrix(X)
    if values.size and not np.all((values == 0) | (values == 1)):
        raise ValueError(f"{name} must be binary (entries in {{0, 1}})")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(
            f"{name} has {X.shape[1]} features, expected {n_features}"
        )
    return X


def check_targets(y, n_samples):
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n_samples:
        raise ValueError(f"y has {y.shape[0]} entries, expected {n_samples}")
    if np.any((y < 0) | (y > 1)) or not np.all(np.isfinite(y)):
        raise ValueError("targets must lie in [0, 1]")
    return y


def check_real_matrix(E, n_features=None, name="E"):
    E = np.asarray(E, dtype=np.float64)
    if E.ndim == 1:
        E = E.reshape(1, -1)
    if E.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {E.shape}")
    if not np.all(np.isfinite(E)):
        raise ValueError(f"{name} contains non-finite values")
    if n_features is not None and E.shape[1] != n_features:
        raise ValueError(f"{name} has {E.shape[1]} columns, expected {n_features}")
    return E


def check_is_fitted(estimator, attr):
    if getattr(estimator, attr, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first"
        )


def harden(y, threshold=0.5):
    """Binary labels from (possibly smoothed) targets."""
    return (np.asarray(y, dtype=np.float64) >= threshold).astype(np.int64)
