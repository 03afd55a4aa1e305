"""catquant: post-training quantization with cluster-wise affine logit correction."""

from .calibration import CalibConfig, CalibState, eval_kl_out, eval_reg, refine
from .cat import (
    AffineParams,
    ClusterAffineCorrector,
    LogitPairSet,
    fit_cluster_affine,
)
from .clustering import SeededKMeans
from .errors import CatQuantError, FormatError, ValidationError
from .io import ArtifactBundle, load_bundle, load_model, read_tensor, save_bundle, save_model, write_tensor
from .net import (
    Layer,
    QuantSpec,
    TinyNet,
    collect_quant_params,
    forward_fp,
    forward_lq,
)
from .numerics import ElemStats, kl_divergence, paired_stats, softmax_t
from .pca import LogitPca
from .quantizer import QuantParams, dequantize, derive_minmax, fake_quantize, quantize

__version__ = "0.1.0"

__all__ = [
    "AffineParams",
    "ArtifactBundle",
    "CalibConfig",
    "CalibState",
    "CatQuantError",
    "ClusterAffineCorrector",
    "ElemStats",
    "FormatError",
    "Layer",
    "LogitPairSet",
    "LogitPca",
    "QuantParams",
    "QuantSpec",
    "SeededKMeans",
    "TinyNet",
    "ValidationError",
    "collect_quant_params",
    "dequantize",
    "derive_minmax",
    "eval_kl_out",
    "eval_reg",
    "fake_quantize",
    "fit_cluster_affine",
    "forward_fp",
    "forward_lq",
    "kl_divergence",
    "load_bundle",
    "load_model",
    "paired_stats",
    "quantize",
    "read_tensor",
    "refine",
    "save_bundle",
    "save_model",
    "softmax_t",
    "write_tensor",
]
