"""A tiny dense/ReLU feed-forward engine with fake-quantized inference.

The full-precision pass is plain float64 matrix arithmetic. The quantized
pass fake-quantizes each layer's weight matrix and each hidden activation
output (post-ReLU) with previously calibrated :class:`QuantParams`; final
logits are returned unquantized and un-softmaxed. Biases stay in float.

Quantized tensors are keyed by name: ``layer{i}.weight`` for every layer and
``layer{i}.act`` for every non-final layer. A key mapped to ``None`` means
that tensor is left unquantized (the "quantization disabled" sentinel); a
missing key is a configuration error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantizer import QuantParams, derive_minmax, fake_quantize
from .validation import as_matrix, as_vector

ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # out x in
    bias: np.ndarray  # out
    activation: str = "relu"

    def __post_init__(self):
        weights = as_matrix(self.weights, "weights")
        bias = as_vector(self.bias, "bias")
        if bias.shape[0] != weights.shape[0]:
            raise ValueError(
                f"bias length {bias.shape[0]} != output width {weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True)
class TinyNet:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        layers = tuple(self.layers)
        for i in range(len(layers) - 1):
            out_w = layers[i].weights.shape[0]
            in_w = layers[i + 1].weights.shape[1]
            if out_w != in_w:
                raise ValueError(
                    f"layer {i} produces {out_w} features but layer {i + 1} "
                    f"expects {in_w}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weights.shape[0]


@dataclass(frozen=True)
class QuantSpec:
    """Bit-width configuration for a quantized forward pass.

    ``None`` disables quantization of that tensor class. The final layer's
    weights use ``last_layer_bits`` (default 8, the usual convention of
    keeping the last layer at higher precision); set it to ``weight_bits``
    to quantize the whole net uniformly.
    """

    weight_bits: int | None = 8
    act_bits: int | None = 8
    last_layer_bits: int | None = 8
    weight_granularity: str = "per_channel"  # output-channel axis

    def __post_init__(self):
        if self.weight_granularity not in ("per_channel", "per_tensor"):
            raise ValueError("weight_granularity must be per_channel or per_tensor")


def weight_key(layer_index: int) -> str:
    return f"layer{layer_index}.weight"


def act_key(layer_index: int) -> str:
    return f"layer{layer_index}.act"


def _apply_activation(values: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(values, 0.0)
    return values


def forward_fp(net: TinyNet, batch) -> np.ndarray:
    """Full-precision logits for an n x in_dim batch."""
    x = as_matrix(batch, "batch")
    if x.shape[1] != net.in_dim:
        raise ValueError(f"batch width {x.shape[1]} != network input {net.in_dim}")
    for layer in net.layers:
        x = _apply_activation(x @ layer.weights.T + layer.bias, layer.activation)
    return x


def collect_quant_params(
    net: TinyNet, calib_batch, spec: QuantSpec
) -> dict[str, QuantParams | None]:
    """Min-max quantization parameters for every tensor slot of the net.

    Weight ranges come from the weights themselves (per output channel by
    default); activation ranges are observed on a full-precision calibration
    pass, one per hidden-layer output.
    """
    x = as_matrix(calib_batch, "calib_batch")
    if x.shape[1] != net.in_dim:
        raise ValueError(f"batch width {x.shape[1]} != network input {net.in_dim}")
    params: dict[str, QuantParams | None] = {}
    last = len(net.layers) - 1
    axis = 0 if spec.weight_granularity == "per_channel" else None
    for i, layer in enumerate(net.layers):
        bits = spec.last_layer_bits if i == last else spec.weight_bits
        params[weight_key(i)] = (
            None if bits is None else derive_minmax(layer.weights, bits, axis)
        )
        x = _apply_activation(x @ layer.weights.T + layer.bias, layer.activation)
        if i != last:
            params[act_key(i)] = (
                None if spec.act_bits is None else derive_minmax(x, spec.act_bits)
            )
    return params


def forward_lq(
    net: TinyNet, batch, params: dict[str, QuantParams | None]
) -> np.ndarray:
    """Logits under fake-quantized weights and hidden activations."""
    x = as_matrix(batch, "batch")
    if x.shape[1] != net.in_dim:
        raise ValueError(f"batch width {x.shape[1]} != network input {net.in_dim}")
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        for key in [weight_key(i)] + ([act_key(i)] if i != last else []):
            if key not in params:
                raise ValueError(f"quantization params missing entry for {key!r}")
        wp = params[weight_key(i)]
        weights = layer.weights if wp is None else fake_quantize(layer.weights, wp)
        x = _apply_activation(x @ weights.T + layer.bias, layer.activation)
        if i != last:
            ap = params[act_key(i)]
            if ap is not None:
                x = fake_quantize(x, ap)
    return x


def logit_pairs(net: TinyNet, batch, params) -> tuple[np.ndarray, np.ndarray]:
    """(lq_logits, fp_logits) for one batch under one parameter set."""
    return forward_lq(net, batch, params), forward_fp(net, batch)
