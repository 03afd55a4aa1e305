"""PCA over quantized logits, used only to build the clustering feature space.

The decomposition runs on the population covariance (divide by n) via a
cyclic Jacobi eigensolver, so fitted components are bit-reproducible and the
explained variances match the per-dimension variance of the transformed
fitting data exactly. Components follow a deterministic sign convention: the
largest-magnitude entry of each component is positive.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .validation import as_matrix

_EIGENVALUE_FLOOR = 1e-12


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = 100, tol: float = 1e-14):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue;
    eigenvectors are the rows of the returned matrix.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix is not symmetric")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v

    norm = np.abs(a).max()
    threshold = tol * max(norm, 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= threshold / n:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q

    eigenvalues = a.diagonal().copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order].T


def _fix_signs(components: np.ndarray) -> np.ndarray:
    flips = np.ones(components.shape[0])
    for i, row in enumerate(components):
        pivot = row[np.argmax(np.abs(row))]
        if pivot < 0:
            flips[i] = -1.0
    return components * flips[:, None]


class LogitPca(BaseEstimator, TransformerMixin):
    """Top-k principal components of a logit matrix.

    Parameters
    ----------
    n_components:
        Target dimension k; must satisfy 1 <= k <= min(n - 1, d) at fit time.

    Attributes (after fit)
    ----------------------
    mean_ : (d,) column means of the fitting data.
    components_ : (k, d) orthonormal rows, descending variance order.
    explained_variance_ : (k,) population variance captured per component.
    rank_deficient_ : True when trailing kept components carry ~zero
        variance (they are then an arbitrary orthonormal completion).
    """

    def __init__(self, n_components: int = 50):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = as_matrix(X, "X")
        n, d = X.shape
        k = self.n_components
        if n < 2:
            raise ValueError(f"PCA needs at least 2 samples, got {n}")
        if not 1 <= k <= min(n - 1, d):
            raise ValueError(
                f"n_components must be in [1, min(n-1, d)] = [1, {min(n - 1, d)}], got {k}"
            )
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = (centered.T @ centered) / n
        eigenvalues, eigenvectors = jacobi_eigh(cov)
        variances = np.maximum(eigenvalues[:k], 0.0)
        self.components_ = _fix_signs(eigenvectors[:k])
        self.explained_variance_ = variances
        self.rank_deficient_ = bool(np.any(variances <= _EIGENVALUE_FLOOR))
        self.n_features_in_ = d
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "components_")
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} columns, got {X.shape[1]}"
            )
        return (X - self.mean_) @ self.components_.T
