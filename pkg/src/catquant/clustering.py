"""Seeded K-Means over PCA features.

Lloyd's algorithm from k-means++ initialization, driven entirely by the
SplitMix64 generator in :mod:`catquant.rng` so that fitted centroids are
bit-identical for a given seed. Assignments use squared Euclidean distance
with ties broken toward the lowest cluster index. An empty cluster (and the
higher-indexed copy of any duplicated centroid pair) is re-seeded at the
point farthest from its assigned centroid.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .rng import SplitMix64
from .validation import as_matrix

_DUPLICATE_TOL = 1e-12


def _nearest(features: np.ndarray, centroids: np.ndarray):
    """Per-point (assignment, squared distance) to the nearest centroid."""
    sq_dist = (
        np.sum(features**2, axis=1)[:, None]
        - 2.0 * features @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    # the expansion can go slightly negative for coincident points
    np.maximum(sq_dist, 0.0, out=sq_dist)
    labels = np.argmin(sq_dist, axis=1)
    return labels, sq_dist[np.arange(len(features)), labels]


def _plus_plus_init(features: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    n = features.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.next_index(n)
    best_sq = np.sum((features - features[chosen[0]]) ** 2, axis=1)
    for i in range(1, k):
        weights = best_sq.copy()
        weights[chosen[:i]] = 0.0
        idx = rng.weighted_index(weights)
        if best_sq[idx] == 0.0:
            # all remaining mass sits on already-chosen points; take any unused
            unused = np.setdiff1d(np.arange(n), chosen[:i])
            idx = unused[rng.next_index(len(unused))]
        chosen[i] = idx
        best_sq = np.minimum(best_sq, np.sum((features - features[idx]) ** 2, axis=1))
    return features[chosen].copy()


class SeededKMeans(BaseEstimator, ClusterMixin):
    """K-Means with a fully documented deterministic seeding scheme.

    Parameters
    ----------
    n_clusters:
        Number of centroids K, with 1 <= K <= n at fit time.
    seed:
        Key for the SplitMix64 stream used by k-means++ and re-seeding.
    max_iter:
        Lloyd iteration cap; convergence is an unchanged assignment vector.

    Attributes (after fit)
    ----------------------
    cluster_centers_ : (K, k) centroid matrix.
    labels_ : fit-set assignments at convergence.
    inertia_ : fit-set sum of squared distances to assigned centroids.
    inertia_history_ : inertia recorded after each assignment step.
    n_iter_ : Lloyd iterations run.
    """

    def __init__(self, n_clusters: int = 8, seed: int = 0, max_iter: int = 300):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = as_matrix(X, "X")
        n = X.shape[0]
        k = self.n_clusters
        if not 1 <= k <= n:
            raise ValueError(f"n_clusters must be in [1, {n}], got {k}")
        rng = SplitMix64(self.seed)
        centroids = _plus_plus_init(X, k, rng)

        labels = np.full(n, -1, dtype=np.int64)
        history = []
        iterations = 0
        for _ in range(self.max_iter):
            new_labels, sq_dist = _nearest(X, centroids)
            history.append(float(np.sum(sq_dist)))
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            iterations += 1
            counts = np.bincount(labels, minlength=k)
            for cid in range(k):
                if counts[cid] > 0:
                    centroids[cid] = X[labels == cid].mean(axis=0)
            self._reseed_dead_centroids(X, centroids, labels, counts)
        else:
            # ran out of iterations; keep the last computed assignment
            labels, sq_dist = _nearest(X, centroids)
            history.append(float(np.sum(sq_dist)))

        self.cluster_centers_ = centroids
        self.labels_ = labels
        self.inertia_ = history[-1]
        self.inertia_history_ = history
        self.n_iter_ = iterations
        self.n_features_in_ = X.shape[1]
        return self

    def _reseed_dead_centroids(self, X, centroids, labels, counts):
        """Replace empty-cluster and duplicate centroids with far points."""
        k = centroids.shape[0]
        dead = [cid for cid in range(k) if counts[cid] == 0]
        for cid in range(k):
            for other in range(cid):
                if (
                    counts[cid] > 0
                    and counts[other] > 0
                    and np.max(np.abs(centroids[cid] - centroids[other])) <= _DUPLICATE_TOL
                    and cid not in dead
                ):
                    dead.append(cid)
        if not dead:
            return
        point_sq = np.sum((X - centroids[labels]) ** 2, axis=1)
        for cid in dead:
            far = int(np.argmax(point_sq))
            if point_sq[far] <= 0.0:
                break
            centroids[cid] = X[far]
            point_sq[far] = -1.0

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "cluster_centers_")
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} columns, got {X.shape[1]}"
            )
        labels, _ = _nearest(X, self.cluster_centers_)
        return labels
