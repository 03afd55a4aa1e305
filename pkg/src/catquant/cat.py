"""Cluster-wise affine correction of quantized logits.

Fitting pipeline: PCA on the quantized logits only (never the full-precision
side), K-Means in the reduced space, then one closed-form elementwise affine
pair per cluster from population moments:

    gamma = cov(lq, fp) / (var(lq) + eps)
    beta  = mean(fp) - gamma * mean(lq)

The correction always operates in the original logit space; PCA exists only
to form clusters. At inference each row is corrected with its predicted
cluster's parameters and blended with the raw input:

    out = (1 - alpha) * lq + alpha * (gamma * lq + beta)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .clustering import SeededKMeans
from .numerics import paired_stats
from .pca import LogitPca
from .validation import as_matrix, check_same_shape

DEFAULT_EPSILON = 1e-8
DEFAULT_ALPHA = 0.4
DEFAULT_CLUSTERS = 64
DEFAULT_PCA_DIM = 50


@dataclass(frozen=True)
class LogitPairSet:
    """Aligned (quantized, full-precision) logit matrices over one sample set."""

    lq: np.ndarray
    fp: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        lq = as_matrix(self.lq, "lq")
        fp = as_matrix(self.fp, "fp")
        check_same_shape(lq, fp, "lq", "fp")
        object.__setattr__(self, "lq", lq)
        object.__setattr__(self, "fp", fp)

    @property
    def n_samples(self) -> int:
        return self.lq.shape[0]

    @property
    def n_dims(self) -> int:
        return self.lq.shape[1]

    def subset(self, indices) -> "LogitPairSet":
        return LogitPairSet(self.lq[indices], self.fp[indices], self.source_tag)


@dataclass(frozen=True)
class AffineParams:
    """Elementwise (gamma, beta) for one cluster.

    An empty cluster gets the identity fallback gamma=1, beta=0.
    ``degenerate_dims`` lists dimensions whose quantized-logit variance fell
    below eps, where gamma is dominated by the regularizer.
    """

    gamma: np.ndarray
    beta: np.ndarray
    cluster_size: int
    degenerate_dims: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        if gamma.shape != beta.shape or gamma.ndim != 1:
            raise ValueError("gamma and beta must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(beta))):
            raise ValueError("affine parameters must be finite")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)


def fit_cluster_affine(
    lq_rows,
    fp_rows,
    epsilon: float = DEFAULT_EPSILON,
    variance_floor: bool = False,
    n_dims: int | None = None,
) -> AffineParams:
    """Closed-form affine fit for one cluster's rows.

    With ``variance_floor`` the denominator is max(var, epsilon) instead of
    var + epsilon; both agree when var >> epsilon. Zero rows trigger the
    identity fallback, in which case ``n_dims`` supplies the width.
    """
    lq = np.asarray(lq_rows, dtype=np.float64)
    fp = np.asarray(fp_rows, dtype=np.float64)
    if lq.shape != fp.shape:
        raise ValueError(f"cluster rows must share a shape, got {lq.shape} vs {fp.shape}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if lq.shape[0] == 0:
        if n_dims is None:
            n_dims = lq.shape[1] if lq.ndim == 2 else 0
        return AffineParams(
            gamma=np.ones(n_dims), beta=np.zeros(n_dims), cluster_size=0
        )

    stats = paired_stats(lq, fp)
    mean_fp = fp.mean(axis=0)
    variance = stats.variance
    if variance_floor:
        denom = np.maximum(variance, epsilon)
    else:
        denom = variance + epsilon
    if np.any(denom == 0):
        raise ValueError("zero variance with epsilon=0: cannot fit affine parameters")
    gamma = stats.cross_cov / denom
    beta = mean_fp - gamma * stats.mean
    degenerate = frozenset(int(i) for i in np.flatnonzero(variance < epsilon))
    return AffineParams(
        gamma=gamma, beta=beta, cluster_size=lq.shape[0], degenerate_dims=degenerate
    )


class ClusterAffineCorrector(BaseEstimator, TransformerMixin):
    """Fit and apply the per-cluster affine logit correction.

    Parameters
    ----------
    n_clusters:
        Cluster count K; K=1 degenerates to a single global affine map.
    pca_dim:
        Dimension of the clustering feature space.
    alpha:
        Blend weight in [0, 1]; 0 returns inputs unchanged, 1 applies the
        affine map fully.
    epsilon:
        Positive variance regularizer in the gamma denominator.
    seed:
        Clustering seed; fitting is bit-reproducible given identical inputs.
    variance_floor:
        Use max(var, epsilon) instead of var + epsilon.

    Attributes (after fit)
    ----------------------
    pca_ : fitted :class:`LogitPca` over the quantized logits.
    kmeans_ : fitted :class:`SeededKMeans` over the PCA features.
    affine_ : list of K :class:`AffineParams`.
    fit_meta_ : dict with sample_count, seed, and the fit-set per-element
        mean squared logit errors before (``fit_mse_identity``) and after
        (``fit_mse_cat``) full-strength correction.
    """

    def __init__(
        self,
        n_clusters: int = DEFAULT_CLUSTERS,
        pca_dim: int = DEFAULT_PCA_DIM,
        alpha: float = DEFAULT_ALPHA,
        epsilon: float = DEFAULT_EPSILON,
        seed: int = 0,
        variance_floor: bool = False,
    ):
        self.n_clusters = n_clusters
        self.pca_dim = pca_dim
        self.alpha = alpha
        self.epsilon = epsilon
        self.seed = seed
        self.variance_floor = variance_floor

    def _validate_params(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_clusters < 1:
            raise ValueError(f"n_clusters must be >= 1, got {self.n_clusters}")

    def fit(self, X, y):
        """Fit on aligned logits: X holds quantized rows, y full-precision rows."""
        self._validate_params()
        pairs = X if isinstance(X, LogitPairSet) else LogitPairSet(X, y)
        if pairs.n_samples == 0:
            raise ValueError("cannot fit on an empty pair set")
        if self.n_clusters > pairs.n_samples:
            raise ValueError(
                f"n_clusters={self.n_clusters} exceeds sample count {pairs.n_samples}"
            )

        self.pca_ = LogitPca(n_components=self.pca_dim).fit(pairs.lq)
        features = self.pca_.transform(pairs.lq)
        self.kmeans_ = SeededKMeans(n_clusters=self.n_clusters, seed=self.seed).fit(
            features
        )
        labels = self.kmeans_.labels_
        self.affine_ = [
            fit_cluster_affine(
                pairs.lq[labels == cid],
                pairs.fp[labels == cid],
                epsilon=self.epsilon,
                variance_floor=self.variance_floor,
                n_dims=pairs.n_dims,
            )
            for cid in range(self.n_clusters)
        ]
        self.n_features_in_ = pairs.n_dims

        corrected = self.apply(pairs.lq, alpha=1.0)
        self.fit_meta_ = {
            "sample_count": pairs.n_samples,
            "seed": self.seed,
            "fit_mse_identity": float(np.mean((pairs.lq - pairs.fp) ** 2)),
            "fit_mse_cat": float(np.mean((corrected - pairs.fp) ** 2)),
        }
        return self

    def apply(self, lq_logits, alpha: float | None = None) -> np.ndarray:
        """Correct a batch of quantized logits, blending at ``alpha``.

        ``alpha`` defaults to the constructor value; passing it explicitly
        lets sweeps re-blend without refitting.
        """
        check_is_fitted(self, "affine_")
        if alpha is None:
            alpha = self.alpha
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        lq = as_matrix(lq_logits, "lq_logits")
        if lq.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} columns, got {lq.shape[1]}"
            )
        if alpha == 0.0:
            return lq.copy()

        labels = self.kmeans_.predict(self.pca_.transform(lq))
        gamma = np.stack([p.gamma for p in self.affine_])[labels]
        beta = np.stack([p.beta for p in self.affine_])[labels]
        affine = gamma * lq + beta
        if alpha == 1.0:
            return affine
        return (1.0 - alpha) * lq + alpha * affine

    def transform(self, X) -> np.ndarray:
        return self.apply(X)
