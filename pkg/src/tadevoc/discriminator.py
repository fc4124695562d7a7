"""Filter-bank random-window discriminators.

Each of the four discriminators slices a random window from the waveform,
splits it into sub-bands with a PQMF analysis bank and scores the result with
a stack of strided conv + LeakyReLU blocks.  There is no pooling anywhere;
time resolution drops only through convolution strides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigurationError, InputError
from .generator import add_weight_norm_conv, wn_conv
from .nn import Conv1dSpec
from .pqmf import PqmfBank, analysis_weights, default_bank

DEFAULT_WINDOWS = (512, 1024, 2048, 4096)
DEFAULT_BANDS = (1, 2, 4, 8)


@dataclass(frozen=True)
class Layer:
    kind: str  # "conv" or "leaky_relu"
    name: str = ""
    conv: Conv1dSpec | None = None
    slope: float = 0.0


@dataclass(frozen=True)
class RwdSpec:
    window_size: int
    num_bands: int
    channels: tuple[int, ...] = (64, 128, 256, 512)
    kernel_size: int = 5
    strides: tuple[int, ...] = (2, 2, 2, 2)
    slope: float = 0.2
    final_kernel_size: int = 3

    def __post_init__(self):
        if self.window_size % self.num_bands:
            raise ConfigurationError("window_size must be divisible by num_bands")
        if len(self.channels) != len(self.strides):
            raise ConfigurationError("one stride per DBlock is required")

    @property
    def input_length(self) -> int:
        """Time steps after sub-band analysis."""
        return self.window_size // self.num_bands

    @property
    def downsampling(self) -> int:
        return math.prod(self.strides)

    def layers(self) -> list[Layer]:
        out: list[Layer] = []
        in_ch = self.num_bands
        for i, (ch, stride) in enumerate(zip(self.channels, self.strides)):
            out.append(Layer("conv", f"block{i}", Conv1dSpec(in_ch, ch, self.kernel_size, stride=stride)))
            out.append(Layer("leaky_relu", slope=self.slope))
            in_ch = ch
        out.append(Layer("conv", "out", Conv1dSpec(in_ch, 1, self.final_kernel_size)))
        return out

    def score_length(self) -> int:
        length = self.input_length
        for layer in self.layers():
            if layer.kind == "conv":
                length = layer.conv.output_length(length)
        return length


DEFAULT_RWD_SPECS = tuple(RwdSpec(w, b) for w, b in zip(DEFAULT_WINDOWS, DEFAULT_BANDS))


def default_banks(specs: Sequence[RwdSpec] = DEFAULT_RWD_SPECS) -> list[PqmfBank]:
    return [default_bank(s.num_bands) for s in specs]


def init_discriminators(
    specs: Sequence[RwdSpec] = DEFAULT_RWD_SPECS, seed: int = 0, init_std: float = 0.02
) -> dict[str, np.ndarray]:
    """Independent weight-normalized parameters for every discriminator, ``disc.k{1..}``."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for k, spec in enumerate(specs, start=1):
        for layer in spec.layers():
            if layer.kind == "conv":
                c = layer.conv
                add_weight_norm_conv(params, rng, f"disc.k{k}.{layer.name}", c.out_channels, c.in_channels, c.kernel_size, init_std)
    return params


def sample_random_window(x: np.ndarray, window_size: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    length = np.shape(ad._val(x))[-1]
    if length < window_size:
        raise InputError(f"waveform of {length} samples is shorter than the {window_size}-sample window")
    start = int(rng.integers(0, length - window_size + 1))
    return x[..., start : start + window_size], start


def rwd_graph(window, spec: RwdSpec, bank: PqmfBank, p: Mapping[str, Var], k: int) -> Var:
    """Score map ``(..., 1, T_s)`` for a ``(..., W)`` window."""
    wv = ad._val(window)
    if wv.shape[-1] != spec.window_size:
        raise ConfigurationError(f"discriminator {k} expects {spec.window_size} samples, got {wv.shape[-1]}")
    if bank.num_bands != spec.num_bands:
        raise ConfigurationError(f"discriminator {k} expects a {spec.num_bands}-band bank")
    x = ad.reshape(window, wv.shape[:-1] + (1, wv.shape[-1]))
    x = ad.conv1d(x, analysis_weights(bank, wv.dtype), None, 1, bank.num_bands)
    for layer in spec.layers():
        if layer.kind == "conv":
            x = wn_conv(p, f"disc.k{k}.{layer.name}", x, layer.conv.dilation, layer.conv.stride)
        elif layer.kind == "leaky_relu":
            x = ad.leaky_relu(x, layer.slope)
        else:
            raise ConfigurationError(f"unknown layer kind {layer.kind!r}")
    return x


def rwd_forward(window: np.ndarray, spec: RwdSpec, bank: PqmfBank, params: Mapping[str, np.ndarray], k: int) -> np.ndarray:
    """Raw (unsquashed) score map ``(1, T_s)`` of discriminator ``k`` (1-based)."""
    window = np.asarray(window)
    dtype = params[f"disc.k{k}.out.weight_v"].dtype
    return rwd_graph(window.astype(dtype, copy=False), spec, bank, ad.constants(params), k).value


def fbrwd_scores(
    x,
    specs: Sequence[RwdSpec],
    banks: Sequence[PqmfBank],
    p: Mapping[str, Var],
    rng: np.random.Generator,
    repeats: int,
) -> list[tuple[int, Var]]:
    """Mean score for each (discriminator, repeat); windows drawn k-major, repeat-minor."""
    if repeats < 1:
        raise ConfigurationError("window repeats must be >= 1")
    scores = []
    for k, (spec, bank) in enumerate(zip(specs, banks), start=1):
        for _ in range(repeats):
            length = ad._val(x).shape[-1]
            if length < spec.window_size:
                raise InputError(f"waveform of {length} samples is shorter than the {spec.window_size}-sample window")
            start = int(rng.integers(0, length - spec.window_size + 1))
            window = ad.time_slice(x, start, start + spec.window_size)
            scores.append((k, ad.mean(rwd_graph(window, spec, bank, p, k))))
    return scores


def fbrwd_evaluate(
    x: np.ndarray,
    specs: Sequence[RwdSpec],
    banks: Sequence[PqmfBank],
    params: Mapping[str, np.ndarray],
    rng: np.random.Generator,
    repeats: int = 2,
) -> list[tuple[int, float]]:
    x = np.asarray(x)
    if x.shape[-1] < max(s.window_size for s in specs):
        raise InputError("waveform is shorter than the largest discriminator window")
    dtype = params[f"disc.k1.out.weight_v"].dtype
    scores = fbrwd_scores(Var(x.astype(dtype, copy=False)), specs, banks, ad.constants(params), rng, repeats)
    return [(k, float(s)) for k, s in scores]
