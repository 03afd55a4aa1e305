"""Uniform affine quantization.

A b-bit signed grid spans [-2^(b-1), 2^(b-1)-1]. A tensor maps onto it via a
scale and zero-point derived from its observed min/max range, either with one
(scale, zero_point) pair for the whole tensor or one pair per slice along a
channel axis. Rounding is round-half-to-even throughout (np.rint), which is
deterministic and platform-stable.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .validation import as_float_array

MIN_BITS = 2
MAX_BITS = 8


@dataclass(frozen=True)
class QuantParams:
    """Scale/zero-point pair(s) plus the integer grid for one tensor.

    ``scale`` and ``zero_point`` are 0-d for per-tensor granularity or 1-d
    (one entry per channel) when ``channel_axis`` is set. ``zero_point`` is
    integer-valued; the affine map is f ~ scale * (q - zero_point).
    """

    bit_width: int
    scale: np.ndarray
    zero_point: np.ndarray
    channel_axis: int | None = None

    def __post_init__(self):
        if not MIN_BITS <= self.bit_width <= MAX_BITS:
            raise ValueError(
                f"bit_width must be in [{MIN_BITS}, {MAX_BITS}], got {self.bit_width}"
            )
        scale = np.asarray(self.scale, dtype=np.float64)
        zero_point = np.asarray(self.zero_point, dtype=np.int64)
        if scale.shape != zero_point.shape:
            raise ValueError(
                f"scale and zero_point shapes differ: {scale.shape} vs {zero_point.shape}"
            )
        if self.channel_axis is None and scale.ndim != 0:
            raise ValueError("per-tensor params must carry scalar scale/zero_point")
        if self.channel_axis is not None and scale.ndim != 1:
            raise ValueError("per-channel params must carry 1-D scale/zero_point")
        if not np.all(scale > 0):
            raise ValueError("scale must be positive")
        scale.setflags(write=False)
        zero_point.setflags(write=False)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "zero_point", zero_point)

    @property
    def q_min(self) -> int:
        return -(1 << (self.bit_width - 1))

    @property
    def q_max(self) -> int:
        return (1 << (self.bit_width - 1)) - 1

    def with_scale(self, scale: np.ndarray) -> "QuantParams":
        return replace(self, scale=scale)

    def with_zero_point(self, zero_point: np.ndarray) -> "QuantParams":
        return replace(self, zero_point=zero_point)


def _broadcast_shape(values: np.ndarray, params: QuantParams) -> tuple[int, ...]:
    if params.channel_axis is None:
        return ()
    axis = params.channel_axis
    if not -values.ndim <= axis < values.ndim:
        raise ValueError(f"channel_axis {axis} out of range for shape {values.shape}")
    axis %= values.ndim
    if params.scale.shape[0] != values.shape[axis]:
        raise ValueError(
            f"per-channel params cover {params.scale.shape[0]} slices but axis "
            f"{axis} has {values.shape[axis]}"
        )
    shape = [1] * values.ndim
    shape[axis] = values.shape[axis]
    return tuple(shape)


def derive_minmax(values, bit_width: int, channel_axis: int | None = None) -> QuantParams:
    """Min-max calibration: scale/zero-point from the observed extrema.

    scale = (f_max - f_min) / (q_max - q_min) and
    zero_point = rint(q_min - f_min / scale), per slice when a channel axis
    is given. A constant slice (f_max == f_min) gets
    scale = max(|f_max|, 1) * 2^(1-b) and zero_point = 0, keeping the
    constant representable without a zero division.
    """
    values = as_float_array(values, "values")
    if values.size == 0:
        raise ValueError("cannot derive quantization range from an empty tensor")
    q_min = -(1 << (bit_width - 1))
    q_max = (1 << (bit_width - 1)) - 1

    if channel_axis is None:
        f_min = np.asarray(values.min())
        f_max = np.asarray(values.max())
    else:
        moved = np.moveaxis(values, channel_axis, 0).reshape(values.shape[channel_axis], -1)
        f_min = moved.min(axis=1)
        f_max = moved.max(axis=1)

    span = f_max - f_min
    degenerate = span == 0
    scale = np.where(degenerate, 1.0, span) / (q_max - q_min)
    scale = np.where(
        degenerate, np.maximum(np.abs(f_max), 1.0) * 2.0 ** (1 - bit_width), scale
    )
    zero_point = np.where(degenerate, 0, np.rint(q_min - f_min / scale)).astype(np.int64)
    return QuantParams(
        bit_width=bit_width, scale=scale, zero_point=zero_point, channel_axis=channel_axis
    )


def quantize(values, params: QuantParams) -> np.ndarray:
    """Map reals onto the integer grid: clip(rint(f/scale) + z, q_min, q_max)."""
    values = np.asarray(values, dtype=np.float64)
    shape = _broadcast_shape(values, params)
    scale = params.scale.reshape(shape)
    zero_point = params.zero_point.reshape(shape)
    q = np.rint(values / scale) + zero_point
    return np.clip(q, params.q_min, params.q_max).astype(np.int64)


def dequantize(q, params: QuantParams) -> np.ndarray:
    """Reconstruct reals from grid values: scale * (q - zero_point)."""
    q = np.asarray(q)
    if np.any(q < params.q_min) or np.any(q > params.q_max):
        raise ValueError(
            f"quantized values outside grid [{params.q_min}, {params.q_max}]"
        )
    shape = _broadcast_shape(q, params)
    scale = params.scale.reshape(shape)
    zero_point = params.zero_point.reshape(shape)
    return scale * (q.astype(np.float64) - zero_point)


def fake_quantize(values, params: QuantParams) -> np.ndarray:
    """dequantize(quantize(values)): snap reals onto the representable grid."""
    return dequantize(quantize(values, params), params)
