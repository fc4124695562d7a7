"""TADE-conditioned generator: noise -> waveform at 256 samples per mel frame.

Parameters live in a flat ``{dotted.name: ndarray}`` dict.  Every convolution
is weight-normalized and stored as ``<prefix>.weight_v`` (direction),
``<prefix>.weight_g`` (per-output-channel magnitude) and ``<prefix>.bias``.
The forward pass infers channel counts and kernel widths from those shapes,
so a checkpoint alone fully describes the network.

Layout::

    input_conv                    noise (128) -> C
    stage{0..7}.resblock          TADEResBlock at 1x..128x frame rate, then x2 upsample
    final.resblock                TADEResBlock at 256x
    final.conv                    C -> 1, tanh

Each TADEResBlock has ``tade1``/``tade2`` (``cond_conv``, ``gamma_conv``,
``beta_conv``) and ``conv1_signal``/``conv1_gate`` (dilation 1) and
``conv2_signal``/``conv2_gate`` (dilation 2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigurationError, InputError
from .features import MelSpectrogram

NUM_STAGES = 8
STAGE_FACTOR = 2
TOTAL_UPSAMPLING = STAGE_FACTOR**NUM_STAGES
RESBLOCK_DILATIONS = (1, 2)
COND_SLOPE = 0.2


@dataclass(frozen=True)
class GeneratorConfig:
    noise_channels: int = 128
    channels: int = 64
    mel_channels: int = 80
    kernel_size: int = 9
    cond_kernel_size: int = 5
    input_kernel_size: int = 9
    output_kernel_size: int = 9
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("kernel_size", "cond_kernel_size", "input_kernel_size", "output_kernel_size"):
            if getattr(self, name) % 2 == 0:
                raise ConfigurationError(f"{name} must be odd")


def resblock_names() -> list[str]:
    return [f"stage{s}.resblock" for s in range(NUM_STAGES)] + ["final.resblock"]


def add_weight_norm_conv(params, rng, prefix, out_ch, in_ch, kernel, std):
    v = rng.normal(0.0, std, size=(out_ch, in_ch, kernel)).astype(np.float32)
    params[f"{prefix}.weight_v"] = v
    params[f"{prefix}.weight_g"] = np.sqrt(np.sum(v.astype(np.float64) ** 2, axis=(1, 2))).astype(np.float32)
    params[f"{prefix}.bias"] = np.zeros(out_ch, dtype=np.float32)


def init_generator(config: GeneratorConfig | None = None, seed: int = 0) -> dict[str, np.ndarray]:
    """Fresh parameters: N(0, std) directions, magnitudes equal to their norms, zero biases."""
    cfg = config or GeneratorConfig()
    rng = np.random.default_rng(seed)
    c, std = cfg.channels, cfg.init_std
    params: dict[str, np.ndarray] = {}
    add_weight_norm_conv(params, rng, "input_conv", c, cfg.noise_channels, cfg.input_kernel_size, std)
    for block in resblock_names():
        for tade in ("tade1", "tade2"):
            add_weight_norm_conv(params, rng, f"{block}.{tade}.cond_conv", c, cfg.mel_channels, cfg.cond_kernel_size, std)
            add_weight_norm_conv(params, rng, f"{block}.{tade}.gamma_conv", c, c, cfg.kernel_size, std)
            add_weight_norm_conv(params, rng, f"{block}.{tade}.beta_conv", c, c, cfg.kernel_size, std)
        for conv in ("conv1_signal", "conv1_gate", "conv2_signal", "conv2_gate"):
            add_weight_norm_conv(params, rng, f"{block}.{conv}", c, c, cfg.kernel_size, std)
    add_weight_norm_conv(params, rng, "final.conv", 1, c, cfg.output_kernel_size, std)
    return params


def count_parameters(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(np.asarray(v).size for v in params.values()))


def transform_path_prefixes(block: str) -> list[str]:
    """Convolutions whose zeroing turns ``block`` into the identity."""
    return [f"{block}.conv2_signal", f"{block}.conv2_gate", f"{block}.conv1_signal", f"{block}.conv1_gate"]


def conditioning_reach(params: Mapping[str, np.ndarray]) -> int:
    """Output samples beyond a mel frame's own 256 that its convolutional paths can reach.

    Walks the network backwards from one output sample, tracking the
    half-width of the dependency interval at each resolution.  Instance
    normalization's per-channel statistics are global and not counted here.
    """
    half = lambda prefix: params[f"{prefix}.weight_v"].shape[-1] // 2  # noqa: E731

    def block_widths(block: str) -> tuple[int, int]:
        d1, d2 = RESBLOCK_DILATIONS
        conv1, conv2 = half(f"{block}.conv1_signal") * d1, half(f"{block}.conv2_signal") * d2

        def modulation(tade):
            return max(half(f"{block}.{tade}.gamma_conv"), half(f"{block}.{tade}.beta_conv")) + half(f"{block}.{tade}.cond_conv")

        cond = max(conv2 + modulation("tade2"), conv2 + conv1 + modulation("tade1"))
        return conv1 + conv2, cond

    h = half("final.conv")
    x_width, cond_width = block_widths("final.resblock")
    reach = h + cond_width
    h += x_width
    for s in reversed(range(NUM_STAGES)):
        h = -(-h // STAGE_FACTOR)
        x_width, cond_width = block_widths(f"stage{s}.resblock")
        reach = max(reach, (h + cond_width) * STAGE_FACTOR ** (NUM_STAGES - s))
        h += x_width
    return reach


# ----------------------------------------------------------------- graph


def wn_conv(p: Mapping[str, Var], prefix: str, x, dilation: int = 1, stride: int = 1) -> Var:
    w = ad.weight_norm(p[f"{prefix}.weight_v"], p[f"{prefix}.weight_g"])
    return ad.conv1d(x, w, p[f"{prefix}.bias"], dilation, stride)


def resample_condition(cond, length: int):
    """Nearest-neighbour stretch of the conditioning map to ``length`` steps."""
    frames = ad._val(cond).shape[-1]
    if frames == 0 or length % frames:
        raise ConfigurationError(f"cannot resample {frames} conditioning frames to {length} steps")
    return ad.upsample_nearest(cond, length // frames)


def tade_forward(x, cond, p: Mapping[str, Var], prefix: str) -> tuple[Var, Var]:
    """Instance-normalize ``x`` and modulate it with ``gamma * c + beta`` predicted from ``cond``.

    Returns the styled map and the conditioning resampled to ``x``'s length.
    """
    length = ad._val(x).shape[-1]
    cond = resample_condition(cond, length)
    hidden = ad.leaky_relu(wn_conv(p, f"{prefix}.cond_conv", cond), COND_SLOPE)
    gamma = wn_conv(p, f"{prefix}.gamma_conv", hidden)
    beta = wn_conv(p, f"{prefix}.beta_conv", hidden)
    if gamma.shape != ad._val(x).shape:
        raise ConfigurationError(f"modulation shape {gamma.shape} differs from activation shape {ad._val(x).shape}")
    return gamma * ad.instance_norm(x) + beta, ad.as_var(cond)


def tade_res_block(x, cond, p: Mapping[str, Var], prefix: str) -> Var:
    d1, d2 = RESBLOCK_DILATIONS
    h, cond = tade_forward(x, cond, p, f"{prefix}.tade1")
    y = ad.gated_tanh(wn_conv(p, f"{prefix}.conv1_signal", h, d1), wn_conv(p, f"{prefix}.conv1_gate", h, d1))
    h, _ = tade_forward(y, cond, p, f"{prefix}.tade2")
    y = ad.gated_tanh(wn_conv(p, f"{prefix}.conv2_signal", h, d2), wn_conv(p, f"{prefix}.conv2_gate", h, d2))
    return ad.add(x, y)


def generator_graph(z, mel, p: Mapping[str, Var]) -> Var:
    """Waveform ``(..., 256 * frames)`` from noise ``(..., 128, F)`` and mel ``(..., 80, F)``."""
    x = wn_conv(p, "input_conv", z)
    for s in range(NUM_STAGES):
        x = tade_res_block(x, mel, p, f"stage{s}.resblock")
        x = ad.upsample_nearest(x, STAGE_FACTOR)
    x = tade_res_block(x, mel, p, "final.resblock")
    y = ad.tanh(wn_conv(p, "final.conv", x))
    shape = y.shape
    return ad.reshape(y, shape[:-2] + shape[-1:])


# ----------------------------------------------------------------- public API


def _mel_array(mel) -> np.ndarray:
    return mel.data if isinstance(mel, MelSpectrogram) else np.asarray(mel)


def generator_forward(z: np.ndarray, mel, params: Mapping[str, np.ndarray]) -> np.ndarray:
    mel = _mel_array(mel)
    z = np.asarray(z)
    if z.shape[-1] != mel.shape[-1]:
        raise InputError(f"noise has {z.shape[-1]} frames but the mel has {mel.shape[-1]}")
    if mel.shape[-1] < 1:
        raise InputError("need at least one conditioning frame")
    expected_noise = params["input_conv.weight_v"].shape[1]
    if z.shape[-2] != expected_noise:
        raise InputError(f"noise must have {expected_noise} channels, got {z.shape[-2]}")
    dtype = params["input_conv.weight_v"].dtype
    out = generator_graph(z.astype(dtype, copy=False), mel.astype(dtype, copy=False), ad.constants(params))
    return out.value


def sample_noise(rng: np.random.Generator, frames: int, channels: int = 128, batch: int | None = None, dtype=np.float32):
    shape = (channels, frames) if batch is None else (batch, channels, frames)
    return rng.standard_normal(shape).astype(dtype)


def generate(mel, params: Mapping[str, np.ndarray], seed: int) -> np.ndarray:
    """Sample z ~ N(0, I) from a seeded stream and run the generator."""
    mel = _mel_array(mel)
    channels = params["input_conv.weight_v"].shape[1]
    z = sample_noise(np.random.default_rng(seed), mel.shape[-1], channels)
    return generator_forward(z, mel, params)
