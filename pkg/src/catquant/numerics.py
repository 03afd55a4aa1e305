"""Statistical primitives: tempered softmax, KL divergence, paired moments.

Everything here is a pure function of float64 arrays. Moments are population
moments (divide by the sample count), matching what the cluster-wise affine
fit consumes downstream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_float_array, as_matrix, check_same_shape


@dataclass(frozen=True)
class ElemStats:
    """Element-wise first/second moments of one matrix or a matched pair.

    ``cross_cov`` is present only when the stats were computed over paired
    inputs; it satisfies |cross_cov| <= sqrt(var_a * var_b) up to rounding.
    """

    mean: np.ndarray
    variance: np.ndarray
    cross_cov: np.ndarray | None = None


def softmax_t(logits, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax over the last axis.

    Stabilized by max subtraction, so inputs with |logit| up to several
    hundred normalize to 1 within 1e-12.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = as_float_array(logits, "logits") / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax_t(logits, temperature: float) -> np.ndarray:
    """log(softmax_t(logits)) computed without forming the probabilities."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = as_float_array(logits, "logits") / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def kl_divergence(p, q) -> float:
    """KL(p || q) for two probability vectors, in nats.

    Terms with p[i] == 0 contribute zero. A zero q[i] paired with a positive
    p[i] is a domain error (softmax outputs never trigger it).
    """
    p = as_float_array(p, "p")
    q = as_float_array(q, "q")
    check_same_shape(p, q, "p", "q")
    for name, v in (("p", p), ("q", q)):
        if abs(float(np.sum(v)) - 1.0) > 1e-9:
            raise ValueError(f"{name} must sum to 1 within 1e-9, got {np.sum(v)}")
        if np.any(v < 0):
            raise ValueError(f"{name} has negative entries")
    support = p > 0
    if np.any(q[support] == 0):
        raise ValueError("q is zero where p is positive: KL(p||q) diverges")
    ps = p[support]
    return float(np.sum(ps * (np.log(ps) - np.log(q[support]))))


def paired_stats(a, b) -> ElemStats:
    """Per-column population mean/variance of ``a`` and cross-covariance with ``b``.

    Both inputs are n x d matrices over the same n samples; all moments
    divide by n.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"paired inputs must share a shape, got {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n == 0:
        raise ValueError("paired_stats requires at least one sample")
    mean_a = a.mean(axis=0)
    mean_b = b.mean(axis=0)
    da = a - mean_a
    db = b - mean_b
    variance = np.mean(da * da, axis=0)
    cross = np.mean(da * db, axis=0)
    return ElemStats(mean=mean_a, variance=variance, cross_cov=cross)
