"""Bit-exact persistence: binary tensors, JSON models/bundles, CSV reports.

Tensor files are little-endian: an 8-byte magic ``CATQTNS1``, a uint32 rank,
``rank`` uint64 dims, then the row-major float64 payload. JSON documents are
canonical (sorted keys, two-space indent, shortest round-trip floats, no
NaN/Inf) so identical content yields identical bytes. All parsing is strict:
unknown fields and any invariant violation are errors, never warnings.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .cat import AffineParams, ClusterAffineCorrector
from .clustering import SeededKMeans
from .errors import FormatError, ValidationError
from .net import Layer, TinyNet
from .pca import LogitPca
from .quantizer import MAX_BITS, MIN_BITS, QuantParams

TENSOR_MAGIC = b"CATQTNS1"
MAX_RANK = 8
BUNDLE_SCHEMA = "catquant-bundle-v1"
MODEL_SCHEMA = "catquant-model-v1"
TOOL_VERSION = "0.1.0"


def _atomic_write_bytes(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# binary tensors


def write_tensor(path, tensor) -> None:
    arr = np.ascontiguousarray(tensor, dtype=np.float64)
    if arr.ndim == 0 or arr.ndim > MAX_RANK:
        raise ValueError(f"tensor rank must be in [1, {MAX_RANK}], got {arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite tensor values")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    _atomic_write_bytes(path, header + arr.astype("<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:8] != TENSOR_MAGIC:
        raise FormatError(
            f"{path}: bad magic {blob[:8]!r}, expected {TENSOR_MAGIC!r}"
        )
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    (rank,) = struct.unpack_from("<I", blob, 8)
    if not 1 <= rank <= MAX_RANK:
        raise FormatError(f"{path}: rank {rank} outside [1, {MAX_RANK}]")
    dims_end = 12 + 8 * rank
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated dims block")
    dims = struct.unpack_from(f"<{rank}Q", blob, 12)
    expected = dims_end + 8 * int(np.prod(dims))
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload length mismatch, expected {expected} bytes, "
            f"found {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f8", offset=dims_end).reshape(dims)
    if data.size and not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: tensor contains non-finite values")
    return data.astype(np.float64, copy=True)


# ---------------------------------------------------------------------------
# canonical JSON helpers


def canonical_json(document) -> str:
    return json.dumps(document, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _check_keys(obj, required, optional, where: str) -> None:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    missing = set(required) - obj.keys()
    unknown = obj.keys() - set(required) - set(optional)
    if missing:
        raise ValidationError(f"{where}: missing field(s) {sorted(missing)}")
    if unknown:
        raise ValidationError(f"{where}: unknown field(s) {sorted(unknown)}")


def _float_vector(value, where: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where}: expected a finite 1-D numeric array")
    return arr


def _float_matrix(value, where: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where}: expected a finite 2-D numeric array")
    return arr


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc


# ---------------------------------------------------------------------------
# model files


def save_model(path, net: TinyNet) -> None:
    document = {
        "schema_version": MODEL_SCHEMA,
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            }
            for layer in net.layers
        ],
    }
    write_text(path, canonical_json(document))


def load_model(path) -> TinyNet:
    document = _load_json(path)
    _check_keys(document, ["schema_version", "layers"], [], str(path))
    if document["schema_version"] != MODEL_SCHEMA:
        raise ValidationError(
            f"{path}: schema_version {document['schema_version']!r}, "
            f"expected {MODEL_SCHEMA!r}"
        )
    if not isinstance(document["layers"], list) or not document["layers"]:
        raise ValidationError(f"{path}: layers must be a non-empty list")
    layers = []
    for i, entry in enumerate(document["layers"]):
        where = f"{path}: layers[{i}]"
        _check_keys(entry, ["weights", "bias", "activation"], [], where)
        try:
            layers.append(
                Layer(
                    weights=_float_matrix(entry["weights"], where + ".weights"),
                    bias=_float_vector(entry["bias"], where + ".bias"),
                    activation=entry["activation"],
                )
            )
        except ValueError as exc:
            raise ValidationError(f"{where}: {exc}") from exc
    try:
        return TinyNet(layers=tuple(layers))
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# quantization parameters


def quant_params_to_json(params: QuantParams) -> dict:
    return {
        "bit_width": params.bit_width,
        "scale": params.scale.tolist(),
        "zero_point": params.zero_point.tolist(),
        "channel_axis": params.channel_axis,
    }


def quant_params_from_json(obj, where: str) -> QuantParams:
    _check_keys(obj, ["bit_width", "scale", "zero_point", "channel_axis"], [], where)
    bits = obj["bit_width"]
    if not isinstance(bits, int) or not MIN_BITS <= bits <= MAX_BITS:
        raise ValidationError(
            f"{where}.bit_width: must be an integer in [{MIN_BITS}, {MAX_BITS}]"
        )
    axis = obj["channel_axis"]
    if axis is not None and not isinstance(axis, int):
        raise ValidationError(f"{where}.channel_axis: must be null or an integer")
    scale = np.asarray(obj["scale"], dtype=np.float64)
    zero_point = np.asarray(obj["zero_point"], dtype=np.int64)
    try:
        return QuantParams(
            bit_width=bits, scale=scale, zero_point=zero_point, channel_axis=axis
        )
    except ValueError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------------------
# fitted correctors


def corrector_to_json(corrector: ClusterAffineCorrector) -> dict:
    return {
        "alpha": corrector.alpha,
        "epsilon": corrector.epsilon,
        "n_clusters": corrector.n_clusters,
        "pca_dim": corrector.pca_dim,
        "seed": corrector.seed,
        "variance_floor": corrector.variance_floor,
        "d": corrector.n_features_in_,
        "pca": {
            "mean": corrector.pca_.mean_.tolist(),
            "components": corrector.pca_.components_.tolist(),
            "explained_variance": corrector.pca_.explained_variance_.tolist(),
            "rank_deficient": corrector.pca_.rank_deficient_,
        },
        "kmeans": {
            "centroids": corrector.kmeans_.cluster_centers_.tolist(),
            "inertia": corrector.kmeans_.inertia_,
            "iterations_run": corrector.kmeans_.n_iter_,
        },
        "affine": [
            {
                "gamma": p.gamma.tolist(),
                "beta": p.beta.tolist(),
                "cluster_size": p.cluster_size,
                "degenerate_dims": sorted(p.degenerate_dims),
            }
            for p in corrector.affine_
        ],
        "fit_meta": corrector.fit_meta_,
    }


def corrector_from_json(obj, where: str) -> ClusterAffineCorrector:
    _check_keys(
        obj,
        [
            "alpha",
            "epsilon",
            "n_clusters",
            "pca_dim",
            "seed",
            "variance_floor",
            "d",
            "pca",
            "kmeans",
            "affine",
            "fit_meta",
        ],
        [],
        where,
    )
    alpha = obj["alpha"]
    if not isinstance(alpha, (int, float)) or not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"{where}.alpha: must lie in [0, 1], got {alpha}")
    epsilon = obj["epsilon"]
    if not isinstance(epsilon, (int, float)) or not epsilon > 0:
        raise ValidationError(f"{where}.epsilon: must be positive, got {epsilon}")
    n_clusters = obj["n_clusters"]
    d = obj["d"]

    pca_obj = obj["pca"]
    _check_keys(
        pca_obj,
        ["mean", "components", "explained_variance", "rank_deficient"],
        [],
        f"{where}.pca",
    )
    components = _float_matrix(pca_obj["components"], f"{where}.pca.components")
    if components.shape != (obj["pca_dim"], d):
        raise ValidationError(
            f"{where}.pca.components: expected shape ({obj['pca_dim']}, {d}), "
            f"got {components.shape}"
        )
    gram = components @ components.T
    if not np.allclose(gram, np.eye(components.shape[0]), rtol=0, atol=1e-8):
        raise ValidationError(f"{where}.pca.components: rows are not orthonormal")
    explained = _float_vector(
        pca_obj["explained_variance"], f"{where}.pca.explained_variance"
    )
    if len(explained) != components.shape[0] or np.any(explained < 0):
        raise ValidationError(f"{where}.pca.explained_variance: invalid length or sign")
    if np.any(np.diff(explained) > 0):
        raise ValidationError(f"{where}.pca.explained_variance: not non-increasing")

    pca = LogitPca(n_components=components.shape[0])
    pca.mean_ = _float_vector(pca_obj["mean"], f"{where}.pca.mean")
    if len(pca.mean_) != d:
        raise ValidationError(f"{where}.pca.mean: expected length {d}")
    pca.components_ = components
    pca.explained_variance_ = explained
    pca.rank_deficient_ = bool(pca_obj["rank_deficient"])
    pca.n_features_in_ = d

    km_obj = obj["kmeans"]
    _check_keys(km_obj, ["centroids", "inertia", "iterations_run"], [], f"{where}.kmeans")
    centroids = _float_matrix(km_obj["centroids"], f"{where}.kmeans.centroids")
    if centroids.shape != (n_clusters, components.shape[0]):
        raise ValidationError(
            f"{where}.kmeans.centroids: expected shape "
            f"({n_clusters}, {components.shape[0]}), got {centroids.shape}"
        )
    kmeans = SeededKMeans(n_clusters=n_clusters, seed=obj["seed"])
    kmeans.cluster_centers_ = centroids
    kmeans.inertia_ = float(km_obj["inertia"])
    kmeans.n_iter_ = int(km_obj["iterations_run"])
    kmeans.n_features_in_ = components.shape[0]

    affine_list = obj["affine"]
    if not isinstance(affine_list, list) or len(affine_list) != n_clusters:
        raise ValidationError(
            f"{where}.affine: expected {n_clusters} entries, got "
            f"{len(affine_list) if isinstance(affine_list, list) else type(affine_list)}"
        )
    affine = []
    for cid, entry in enumerate(affine_list):
        aw = f"{where}.affine[{cid}]"
        _check_keys(entry, ["gamma", "beta", "cluster_size", "degenerate_dims"], [], aw)
        gamma = _float_vector(entry["gamma"], aw + ".gamma")
        beta = _float_vector(entry["beta"], aw + ".beta")
        if len(gamma) != d or len(beta) != d:
            raise ValidationError(f"{aw}: gamma/beta must have length {d}")
        affine.append(
            AffineParams(
                gamma=gamma,
                beta=beta,
                cluster_size=int(entry["cluster_size"]),
                degenerate_dims=frozenset(int(i) for i in entry["degenerate_dims"]),
            )
        )

    fit_meta = obj["fit_meta"]
    _check_keys(
        fit_meta,
        ["sample_count", "seed", "fit_mse_identity", "fit_mse_cat"],
        [],
        f"{where}.fit_meta",
    )

    corrector = ClusterAffineCorrector(
        n_clusters=n_clusters,
        pca_dim=obj["pca_dim"],
        alpha=float(alpha),
        epsilon=float(epsilon),
        seed=obj["seed"],
        variance_floor=bool(obj["variance_floor"]),
    )
    corrector.pca_ = pca
    corrector.kmeans_ = kmeans
    corrector.affine_ = affine
    corrector.fit_meta_ = dict(fit_meta)
    corrector.n_features_in_ = d
    return corrector


# ---------------------------------------------------------------------------
# artifact bundles


@dataclass
class ArtifactBundle:
    """Everything one calibration + correction run produced."""

    quant_params: dict[str, QuantParams | None] = field(default_factory=dict)
    cat: ClusterAffineCorrector | None = None
    plain_affine: ClusterAffineCorrector | None = None
    provenance: dict = field(default_factory=dict)
    schema_version: str = BUNDLE_SCHEMA


def save_bundle(path, bundle: ArtifactBundle) -> None:
    document = {
        "schema_version": bundle.schema_version,
        "provenance": {
            "seed": bundle.provenance.get("seed", 0),
            "config_hash": bundle.provenance.get("config_hash", ""),
            "tool_version": bundle.provenance.get("tool_version", TOOL_VERSION),
        },
        "quant_params": {
            name: None if params is None else quant_params_to_json(params)
            for name, params in bundle.quant_params.items()
        },
        "cat": None if bundle.cat is None else corrector_to_json(bundle.cat),
        "plain_affine": (
            None
            if bundle.plain_affine is None
            else corrector_to_json(bundle.plain_affine)
        ),
    }
    write_text(path, canonical_json(document))


def load_bundle(path) -> ArtifactBundle:
    document = _load_json(path)
    _check_keys(
        document,
        ["schema_version", "provenance", "quant_params", "cat", "plain_affine"],
        [],
        str(path),
    )
    if document["schema_version"] != BUNDLE_SCHEMA:
        raise ValidationError(
            f"{path}: schema_version {document['schema_version']!r}, "
            f"expected {BUNDLE_SCHEMA!r}"
        )
    _check_keys(
        document["provenance"],
        ["seed", "config_hash", "tool_version"],
        [],
        f"{path}: provenance",
    )
    quant_params = {}
    for name, obj in document["quant_params"].items():
        quant_params[name] = (
            None
            if obj is None
            else quant_params_from_json(obj, f"{path}: quant_params[{name!r}]")
        )
    cat = (
        None
        if document["cat"] is None
        else corrector_from_json(document["cat"], f"{path}: cat")
    )
    plain = (
        None
        if document["plain_affine"] is None
        else corrector_from_json(document["plain_affine"], f"{path}: plain_affine")
    )
    return ArtifactBundle(
        quant_params=quant_params,
        cat=cat,
        plain_affine=plain,
        provenance=dict(document["provenance"]),
        schema_version=document["schema_version"],
    )


# ---------------------------------------------------------------------------
# CSV reports


def write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(cell) for cell in row))
    write_text(path, "\n".join(lines) + "\n")
