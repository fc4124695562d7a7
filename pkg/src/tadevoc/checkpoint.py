"""Tensor container shared by generator, discriminators and optimizer state.

Layout (little-endian)::

    "SMGN" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name (UTF-8) | u8 ndim | u32 dims[ndim] | f32 data[prod(dims)]

Generator tensors use their bare dotted names, discriminator tensors start
with ``disc.k{1..4}.``, optimizer moments are stored as ``opt.<group>.m.<name>``
/ ``opt.<group>.v.<name>`` with the step count in ``opt.<group>.step``, and the
training step lives in ``train.step``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .binio import Reader, atomic_write
from .errors import FormatError
from .optim import AdamState

MAGIC = b"SMGN"
VERSION = 1


@dataclass
class Checkpoint:
    gen: dict[str, np.ndarray]
    disc: dict[str, np.ndarray] = field(default_factory=dict)
    opt: dict[str, AdamState] = field(default_factory=dict)
    step: int = 0


def tensors_to_bytes(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} cannot be encoded")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def tensors_from_bytes(data: bytes) -> dict[str, np.ndarray]:
    r = Reader(data, "checkpoint")
    r.magic(MAGIC)
    version = r.unpack("I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", r.pos - 4)
    count = r.unpack("I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = r.pos
        name_len = r.unpack("H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not valid UTF-8", start) from exc
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}", start)
        ndim = r.unpack("B")
        dims = r.unpack(f"{ndim}I") if ndim else ()
        dims = (dims,) if isinstance(dims, int) else tuple(dims)
        size = int(np.prod(dims)) if dims else 1
        tensors[name] = r.floats(size).reshape(dims)
    r.finish()
    return tensors


def _flatten(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = dict(ckpt.gen)
    for name, value in ckpt.disc.items():
        if not name.startswith("disc."):
            raise ValueError(f"discriminator tensor {name!r} must start with 'disc.'")
        out[name] = value
    for group, state in ckpt.opt.items():
        out[f"opt.{group}.step"] = np.array(state.step, dtype=np.float32)
        for name in state.m:
            out[f"opt.{group}.m.{name}"] = state.m[name]
            out[f"opt.{group}.v.{name}"] = state.v[name]
    out["train.step"] = np.array(ckpt.step, dtype=np.float32)
    return out


def _unflatten(tensors: dict[str, np.ndarray]) -> Checkpoint:
    ckpt = Checkpoint(gen={})
    for name, value in tensors.items():
        if name == "train.step":
            ckpt.step = int(value)
        elif name.startswith("disc."):
            ckpt.disc[name] = value
        elif name.startswith("opt."):
            _, group, rest = name.split(".", 2)
            state = ckpt.opt.setdefault(group, AdamState())
            if rest == "step":
                state.step = int(value)
            elif rest.startswith("m."):
                state.m[rest[2:]] = value
            elif rest.startswith("v."):
                state.v[rest[2:]] = value
            else:
                raise FormatError(f"unrecognized optimizer tensor {name!r}")
        else:
            ckpt.gen[name] = value
    return ckpt


def save_checkpoint(path, gen_params, disc_params=None, opt_states=None, step: int = 0) -> None:
    ckpt = Checkpoint(dict(gen_params), dict(disc_params or {}), dict(opt_states or {}), step)
    atomic_write(path, tensors_to_bytes(_flatten(ckpt)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    return _unflatten(tensors_from_bytes(data))
