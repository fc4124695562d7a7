"""16-bit PCM mono WAV I/O on top of the stdlib :mod:`wave` module."""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import atomic_write
from .errors import FormatError, InputError

PCM_SCALE = 32768.0
SUPPORTED_RATE = 22050


@dataclass
class WavAudio:
    sample_rate: int
    samples: np.ndarray  # float32 in [-1, 1)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def wav_from_bytes(data: bytes, what: str = "WAV data") -> WavAudio:
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{what} is not a readable PCM WAV file: {exc}") from exc
    if channels != 1:
        raise InputError(
            f"{what} has {channels} channels; only mono is supported "
            f"(convert first, e.g. `sox in.wav -c 1 out.wav`)"
        )
    if width != 2:
        raise InputError(f"{what} uses {8 * width}-bit samples; only 16-bit PCM is supported")
    pcm = np.frombuffer(frames, dtype="<i2")
    return WavAudio(rate, (pcm.astype(np.float32) / np.float32(PCM_SCALE)))


def read_wav(path) -> WavAudio:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return wav_from_bytes(data, str(path))


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Scale by 32768, round and saturate; exact inverse of the reader for 16-bit data."""
    x = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError("cannot write non-finite samples")
    return np.clip(np.round(x * PCM_SCALE), -32768, 32767).astype("<i2")


def wav_to_bytes(audio: WavAudio) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(audio.sample_rate))
        wf.writeframes(to_pcm16(audio.samples).tobytes())
    return buf.getvalue()


def write_wav(path, audio: WavAudio) -> None:
    atomic_write(path, wav_to_bytes(audio))


def require_rate(audio: WavAudio, what: str, expected: int = SUPPORTED_RATE) -> None:
    if audio.sample_rate != expected:
        raise InputError(
            f"{what} is sampled at {audio.sample_rate} Hz but {expected} Hz is required; "
            f"resampling is not supported, convert the file first"
        )
