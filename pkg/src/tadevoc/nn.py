"""Numeric primitives shared by the generator and the discriminators.

Feature maps are plain numpy arrays shaped ``(channels, time)``.  Every
function here also accepts extra leading (batch) axes, i.e. ``(..., C, T)``,
and preserves the input dtype so the same code runs in float32 for training
and float64 for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalDegeneracyError

INSTANCE_NORM_EPS = 1e-5


@dataclass(frozen=True)
class Conv1dSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    dilation: int = 1
    stride: int = 1
    has_bias: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.dilation < 1 or self.stride < 1:
            raise ConfigurationError("dilation and stride must be positive")

    @property
    def receptive_field(self) -> int:
        return (self.kernel_size - 1) * self.dilation + 1

    @property
    def padding(self) -> int:
        return (self.kernel_size // 2) * self.dilation

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_size)

    def output_length(self, length: int) -> int:
        return (length - 1) // self.stride + 1 if length > 0 else 0


def unfold(x: np.ndarray, kernel_size: int, dilation: int = 1, stride: int = 1) -> np.ndarray:
    """Gather the dilated receptive fields of ``x`` into columns.

    Returns an array of shape ``(..., C * kernel_size, T_out)`` laid out
    channel-major, so ``w.reshape(O, -1) @ cols`` is the convolution.
    """
    length = x.shape[-1]
    pad = (kernel_size // 2) * dilation
    t_out = (length - 1) // stride + 1
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    xp = np.pad(x, widths)
    span = (t_out - 1) * stride + 1
    cols = np.stack([xp[..., k * dilation : k * dilation + span : stride] for k in range(kernel_size)], axis=-2)
    return cols.reshape(*x.shape[:-2], x.shape[-2] * kernel_size, t_out)


def fold(cols: np.ndarray, channels: int, length: int, kernel_size: int, dilation: int = 1, stride: int = 1) -> np.ndarray:
    """Adjoint of :func:`unfold`: scatter-add columns back onto the time axis."""
    pad = (kernel_size // 2) * dilation
    t_out = cols.shape[-1]
    span = (t_out - 1) * stride + 1
    g = cols.reshape(*cols.shape[:-2], channels, kernel_size, t_out)
    out = np.zeros((*cols.shape[:-2], channels, length + 2 * pad), dtype=cols.dtype)
    for k in range(kernel_size):
        out[..., k * dilation : k * dilation + span : stride] += g[..., k, :]
    return out[..., pad : pad + length]


def conv1d_raw(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, dilation: int = 1, stride: int = 1) -> np.ndarray:
    out_ch, in_ch, kernel_size = weight.shape
    if x.shape[-2] != in_ch:
        raise ConfigurationError(f"conv expects {in_ch} input channels, got {x.shape[-2]}")
    if kernel_size % 2 == 0:
        raise ConfigurationError(f"kernel_size must be odd, got {kernel_size}")
    cols = unfold(x, kernel_size, dilation, stride)
    out = np.matmul(weight.reshape(out_ch, -1).astype(x.dtype, copy=False), cols)
    if bias is not None:
        out += bias.astype(x.dtype, copy=False)[:, None]
    return out


def conv1d(x: np.ndarray, spec: Conv1dSpec, weights: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Dilated 1-D convolution with symmetric zero "same" padding.

    ``out[o, t] = sum_{i,k} w[o, i, k] * x[i, t*stride + (k - K//2) * dilation] + b[o]``
    """
    if weights.shape != spec.weight_shape:
        raise ConfigurationError(f"weights shape {weights.shape} does not match {spec.weight_shape}")
    if x.shape[-2] != spec.in_channels:
        raise ConfigurationError(f"conv expects {spec.in_channels} input channels, got {x.shape[-2]}")
    if spec.has_bias:
        if bias is None or bias.shape != (spec.out_channels,):
            raise ConfigurationError("bias of shape (out_channels,) required")
    else:
        bias = None
    return conv1d_raw(x, weights, bias, spec.dilation, spec.stride)


def instance_norm(x: np.ndarray, epsilon: float = INSTANCE_NORM_EPS) -> np.ndarray:
    """Standardize each channel over time with the population variance."""
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + epsilon)


def weight_norm_scale(v: np.ndarray) -> np.ndarray:
    """Per-output-channel L2 norm of a direction tensor, shaped for broadcasting."""
    axes = tuple(range(1, v.ndim))
    norms = np.sqrt(np.sum(v * v, axis=axes, keepdims=True))
    if np.any(norms == 0):
        raise NumericalDegeneracyError("weight-norm direction has a zero-norm output channel")
    return norms


def apply_weight_norm(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Effective weight ``g * v / ||v||`` with the norm taken per output channel."""
    v = np.asarray(v)
    g = np.asarray(g, dtype=v.dtype)
    norms = weight_norm_scale(v)
    return g.reshape((-1,) + (1,) * (v.ndim - 1)) * v / norms


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ConfigurationError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    return np.repeat(x, factor, axis=-1)


def softmax_channels(b: np.ndarray) -> np.ndarray:
    shifted = b - b.max(axis=-2, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-2, keepdims=True)


def softmax_gated_tanh(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``tanh(a) * softmax(b)`` with the softmax taken across channels per time step."""
    if a.shape != b.shape:
        raise ConfigurationError(f"gate shape {b.shape} does not match signal shape {a.shape}")
    return np.tanh(a) * softmax_channels(b)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, x * slope)
