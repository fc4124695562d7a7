"""Log-mel conditioning features: STFT, mel projection, log10 and normalization."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .binio import Reader, atomic_write
from .errors import ConfigurationError, FormatError, InputError

HOP_FACTOR = 256  # must equal the generator's total upsampling (2**8)
LOG_FLOOR = 1e-10
MIN_STD = 1e-8

MEL_MAGIC = b"MELF"
MEL_VERSION = 1
STATS_MAGIC = b"MSTA"


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 22050
    fft_size: int = 1024
    hop_size: int = HOP_FACTOR
    win_size: int = 1024
    num_mels: int = 80
    fmin: float = 80.0
    fmax: float = 7600.0
    window: str = "hann"

    def __post_init__(self):
        if self.hop_size != HOP_FACTOR:
            raise ConfigurationError(f"hop_size must be {HOP_FACTOR} to match the generator upsampling")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigurationError(f"need 0 <= fmin < fmax <= sr/2, got fmin={self.fmin} fmax={self.fmax}")
        if self.win_size > self.fft_size:
            raise ConfigurationError("win_size must not exceed fft_size")
        if self.window != "hann":
            raise ConfigurationError("only the Hann window is supported")

    @property
    def fingerprint(self) -> str:
        return (
            f"sr={self.sample_rate};fft={self.fft_size};hop={self.hop_size};win={self.win_size};"
            f"mels={self.num_mels};fmin={self.fmin:g};fmax={self.fmax:g};window={self.window};pad=reflect-center"
        )


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ConfigurationError("mean and std must be 1-D arrays of equal length")
        if np.any(self.std <= 0):
            raise ConfigurationError("feature standard deviations must be positive")

    @property
    def num_mels(self) -> int:
        return self.mean.shape[0]


@dataclass
class MelSpectrogram:
    """Normalized log-mel features, ``data`` shaped ``(num_mels, frames)``."""

    data: np.ndarray
    sample_rate: int
    hop_size: int
    fingerprint: str = ""

    @property
    def num_mels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]


@lru_cache(maxsize=None)
def _hann(win_size: int) -> np.ndarray:
    w = get_window("hann", win_size, fftbins=True)
    w.setflags(write=False)
    return w


def hann_window(win_size: int) -> np.ndarray:
    """Periodic Hann window of ``win_size`` samples (float64, read-only)."""
    return _hann(win_size)


def num_frames(length: int, hop_size: int, win_size: int) -> int:
    return (length + 2 * (win_size // 2) - win_size) // hop_size + 1


def stft(x: np.ndarray, fft_size: int, hop_size: int, win_size: int) -> np.ndarray:
    """Complex STFT shaped ``(..., frames, fft_size // 2 + 1)``.

    Frames of ``win_size`` samples are taken from the signal reflect-padded by
    ``win_size // 2`` on each side, Hann-windowed and zero-padded to
    ``fft_size`` before the DFT.
    """
    x = np.asarray(x)
    if x.shape[-1] == 0:
        raise InputError("cannot analyse an empty signal")
    if win_size > fft_size:
        raise ConfigurationError("win_size must not exceed fft_size")
    if hop_size < 1:
        raise ConfigurationError("hop_size must be >= 1")
    pad = win_size // 2
    if x.shape[-1] <= pad:
        raise InputError(f"signal of {x.shape[-1]} samples is too short for reflect padding of {pad}")
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    xp = np.pad(x, widths, mode="reflect")
    frames = sliding_window_view(xp, win_size, axis=-1)[..., ::hop_size, :]
    window = hann_window(win_size).astype(x.dtype if x.dtype.kind == "f" else np.float64)
    return np.fft.rfft(frames * window, n=fft_size, axis=-1)


def stft_magnitude(x: np.ndarray, fft_size: int, hop_size: int, win_size: int) -> np.ndarray:
    """STFT magnitudes shaped ``(fft_size // 2 + 1, frames)``."""
    mag = np.abs(stft(x, fft_size, hop_size, win_size))
    return np.swapaxes(mag, -1, -2)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MelConfig) -> np.ndarray:
    """Triangular filters with peaks evenly spaced on the mel scale.

    Returns a ``(num_mels, fft_size // 2 + 1)`` float64 matrix, peak weight 1.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.num_mels + 2))
    freqs = np.arange(config.fft_size // 2 + 1) * config.sample_rate / config.fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ConfigurationError(
            f"{config.num_mels} mel bands is too many for fft_size {config.fft_size}: "
            f"filters {empty.tolist()} cover no FFT bin"
        )
    return fb


@lru_cache(maxsize=8)
def _cached_filterbank(config: MelConfig) -> np.ndarray:
    return mel_filterbank(config)


def log_mel(x: np.ndarray, config: MelConfig) -> np.ndarray:
    """Un-normalized ``log10(max(mel, 1e-10))`` in float64, ``(num_mels, frames)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InputError("expected a non-empty mono waveform")
    mag = stft_magnitude(x, config.fft_size, config.hop_size, config.win_size)
    mel = _cached_filterbank(config) @ mag
    return np.log10(np.maximum(mel, LOG_FLOOR))


def compute_feature_stats(corpus: Sequence[np.ndarray], config: MelConfig) -> FeatureStats:
    """Per-bin mean and std of the log-mel values pooled over every frame."""
    if len(corpus) == 0:
        raise InputError("cannot compute statistics of an empty corpus")
    pooled = np.concatenate([log_mel(x, config) for x in corpus], axis=1)
    mean = pooled.mean(axis=1)
    std = np.maximum(pooled.std(axis=1), MIN_STD)
    return FeatureStats(mean, std)


def log_mel_extract(x: np.ndarray, config: MelConfig, stats: FeatureStats) -> MelSpectrogram:
    if stats.num_mels != config.num_mels:
        raise ConfigurationError(f"stats have {stats.num_mels} bins but config asks for {config.num_mels} mels")
    values = (log_mel(x, config) - stats.mean[:, None]) / stats.std[:, None]
    return MelSpectrogram(values.astype(np.float32), config.sample_rate, config.hop_size, config.fingerprint)


# ----------------------------------------------------------------- file formats


def mel_to_bytes(mel: MelSpectrogram) -> bytes:
    header = MEL_MAGIC + struct.pack("<IIIfI", MEL_VERSION, mel.num_mels, mel.frames, mel.sample_rate, mel.hop_size)
    return header + np.ascontiguousarray(mel.data.T, dtype="<f4").tobytes()


def mel_from_bytes(data: bytes) -> MelSpectrogram:
    r = Reader(data, "mel feature file")
    r.magic(MEL_MAGIC)
    version = r.unpack("I")
    if version != MEL_VERSION:
        raise FormatError(f"unsupported mel file version {version}", r.pos - 4)
    num_mels, frames, sample_rate, hop = r.unpack("IIfI")
    values = r.floats(num_mels * frames).reshape(frames, num_mels).T.copy()
    r.finish()
    return MelSpectrogram(values, int(sample_rate), hop, f"sr={int(sample_rate)};hop={hop};mels={num_mels}")


def write_mel(path, mel: MelSpectrogram) -> None:
    atomic_write(path, mel_to_bytes(mel))


def read_mel(path) -> MelSpectrogram:
    with open(path, "rb") as fh:
        return mel_from_bytes(fh.read())


def stats_to_bytes(stats: FeatureStats) -> bytes:
    body = np.concatenate([stats.mean, stats.std]).astype("<f4").tobytes()
    return STATS_MAGIC + struct.pack("<I", stats.num_mels) + body


def stats_from_bytes(data: bytes) -> FeatureStats:
    r = Reader(data, "feature stats file")
    r.magic(STATS_MAGIC)
    n = r.unpack("I")
    mean = r.floats(n)
    std = r.floats(n)
    r.finish()
    return FeatureStats(mean, std)


def write_stats(path, stats: FeatureStats) -> None:
    atomic_write(path, stats_to_bytes(stats))


def read_stats(path) -> FeatureStats:
    with open(path, "rb") as fh:
        return stats_from_bytes(fh.read())
