"""Synthetic corpora for exercising the pipeline at desk scale.

Two generators:

* :func:`make_group_affine_corpus` draws well-separated groups of quantized
  logits and builds the full-precision side as a known per-group elementwise
  affine map (plus optional noise). Group distortions with opposing signs
  make a single global affine fit actively harmful while a cluster-wise fit
  recovers the generating parameters, which is exactly the regime the
  corrector targets.
* :func:`make_demo_net` / :func:`make_demo_inputs` build a small seeded
  dense/ReLU network and blob-structured inputs so the whole
  calibrate -> fit -> evaluate pipeline can run end to end from the CLI.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cat import LogitPairSet
from .net import Layer, TinyNet, forward_fp
from .rng import SplitMix64


def _standard_normal(rng: SplitMix64, shape) -> np.ndarray:
    """Box-Muller normals driven by the deterministic generator."""
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    u1 = np.array([rng.next_float() for _ in range(pairs)])
    u2 = np.array([rng.next_float() for _ in range(pairs)])
    u1 = np.maximum(u1, 1e-300)
    radius = np.sqrt(-2.0 * np.log(u1))
    flat = np.concatenate(
        [radius * np.cos(2.0 * np.pi * u2), radius * np.sin(2.0 * np.pi * u2)]
    )[:count]
    return flat.reshape(shape)


def default_group_distortions(n_groups: int, n_dims: int):
    """Per-group (gamma, beta) patterns with opposing signs across groups.

    The last ``n_groups`` dimensions are cluster-context dimensions left
    undistorted (gamma 1, beta 0). On the leading class dimensions the
    slopes disagree in sign across groups, so a pooled single-affine fit
    averages them toward zero and destroys the argmax, while cluster-wise
    fits recover each group exactly.
    """
    n_class = n_dims - n_groups
    gammas = np.ones((n_groups, n_dims))
    betas = np.zeros((n_groups, n_dims))
    dims = np.arange(n_class)
    for g in range(n_groups):
        if g % 3 == 1:
            gammas[g, :n_class] = 0.8
            betas[g, :n_class] = np.where(dims % 2 == 0, -0.5, 0.5)
        elif g % 3 == 2:
            gammas[g, :n_class] = -4.0
        else:
            gammas[g, :n_class] = 1.25
            betas[g, :n_class] = np.where(dims % 2 == 0, 0.5, -0.5)
    return gammas, betas


@dataclass(frozen=True)
class SyntheticCorpus:
    pairs: LogitPairSet
    labels: np.ndarray  # argmax of the noiseless full-precision logits
    group_ids: np.ndarray
    gammas: np.ndarray  # n_groups x d generating slopes
    betas: np.ndarray  # n_groups x d generating offsets


def make_group_affine_corpus(
    n_samples: int,
    n_dims: int = 8,
    n_groups: int = 3,
    seed: int = 0,
    separation: float = 12.0,
    spread: float = 1.0,
    noise: float = 0.0,
    gammas=None,
    betas=None,
    source_tag: str = "synthetic-group-affine",
) -> SyntheticCorpus:
    """Group-structured (lq, fp) logit pairs with known affine distortions.

    The quantized logits split into leading class dimensions (zero-mean,
    double-``spread`` scatter, these decide the argmax) and ``n_groups``
    trailing context dimensions holding strongly negative group signatures
    ``separation`` apart, so clustering recovers the groups whenever
    separation >> spread while the context never wins the argmax.
    """
    if n_groups < 1 or n_dims < n_groups + 2:
        raise ValueError("need n_dims >= n_groups + 2 class dimensions")
    if n_samples < n_groups:
        raise ValueError("need at least one sample per group")
    if gammas is None or betas is None:
        gammas, betas = default_group_distortions(n_groups, n_dims)
    gammas = np.asarray(gammas, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if gammas.shape != (n_groups, n_dims) or betas.shape != (n_groups, n_dims):
        raise ValueError("gammas/betas must have shape (n_groups, n_dims)")

    rng = SplitMix64(seed)
    n_class = n_dims - n_groups
    centers = np.zeros((n_groups, n_dims))
    centers[:, n_class:] = -1.5 * separation
    for g in range(n_groups):
        centers[g, n_class + g] = -separation

    group_ids = np.arange(n_samples) % n_groups
    scatter = spread * _standard_normal(rng, (n_samples, n_dims))
    scatter[:, :n_class] *= 2.0
    lq = centers[group_ids] + scatter
    fp_clean = gammas[group_ids] * lq + betas[group_ids]
    fp = fp_clean
    if noise > 0:
        fp = fp_clean + noise * _standard_normal(rng, (n_samples, n_dims))
    labels = np.argmax(fp_clean, axis=1)
    return SyntheticCorpus(
        pairs=LogitPairSet(lq=lq, fp=fp, source_tag=source_tag),
        labels=labels,
        group_ids=group_ids,
        gammas=gammas,
        betas=betas,
    )


def make_demo_net(
    seed: int = 0, in_dim: int = 8, hidden: int = 16, out_dim: int = 5
) -> TinyNet:
    """Seeded two-layer dense/ReLU network with roughly unit-scale outputs."""
    rng = SplitMix64(seed ^ 0xD3A0_11E7)
    w0 = _standard_normal(rng, (hidden, in_dim)) / np.sqrt(in_dim)
    b0 = 0.1 * _standard_normal(rng, (hidden,))
    w1 = _standard_normal(rng, (out_dim, hidden)) / np.sqrt(hidden)
    b1 = 0.1 * _standard_normal(rng, (out_dim,))
    return TinyNet(
        layers=(
            Layer(weights=w0, bias=b0, activation="relu"),
            Layer(weights=w1, bias=b1, activation="none"),
        )
    )


def make_demo_inputs(
    net: TinyNet,
    n_samples: int,
    seed: int = 0,
    split: int = 0,
    n_groups: int = 3,
    spread: float = 0.6,
):
    """Blob-structured inputs plus labels from the group centers.

    The blob centers depend only on ``seed`` so different ``split`` values
    (calibration / fitting / evaluation) sample fresh points from the same
    distribution. Each group's label is the class the full-precision network
    assigns to the group's center, so labels are meaningful yet imperfect
    for samples near blob boundaries.
    """
    center_rng = SplitMix64(seed ^ 0x5EED_DA7A)
    centers = 2.0 * _standard_normal(center_rng, (n_groups, net.in_dim))
    sample_rng = SplitMix64((seed + 0x51AB_0000 + split) ^ 0xB10B_5EED)
    group_ids = np.arange(n_samples) % n_groups
    inputs = centers[group_ids] + spread * _standard_normal(
        sample_rng, (n_samples, net.in_dim)
    )
    center_labels = np.argmax(forward_fp(net, centers), axis=1)
    return inputs, center_labels[group_ids]
