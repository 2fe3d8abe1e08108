"""Binary checkpoint format.

Layout (little-endian)::

    b"GROWCKPT"  u32 version  u32 input_ndim  u32 dims...  u32 layer_count
    per layer: u8 tag, then tag-specific u32 shape fields, then f64 entries

Tags: 1 dense (out, in+1; W row-major), 2 conv (out, in, d, d, padding;
kernel then bias), 3 activation (family code), 4 average pool (size),
5 flatten.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..net_core import ACTIVATIONS, Activation, AvgPool2d, Conv2d, Dense, Flatten, Network

MAGIC = b"GROWCKPT"
VERSION = 1
TAG_DENSE, TAG_CONV, TAG_ACT, TAG_POOL, TAG_FLAT = 1, 2, 3, 4, 5


def _u32(*values: int) -> bytes:
    return struct.pack("<" + "I" * len(values), *values)


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def to_bytes(net: Network) -> bytes:
    parts = [MAGIC, _u32(VERSION, len(net.input_shape), *net.input_shape), _u32(len(net.layers))]
    for layer in net.layers:
        if isinstance(layer, Dense):
            parts += [bytes([TAG_DENSE]), _u32(*layer.W.shape), _f64(layer.W)]
        elif isinstance(layer, Conv2d):
            parts += [bytes([TAG_CONV]), _u32(*layer.kernel.shape, layer.padding),
                      _f64(layer.kernel), _f64(layer.bias)]
        elif isinstance(layer, Activation):
            parts += [bytes([TAG_ACT]), _u32(ACTIVATIONS.index(layer.family))]
        elif isinstance(layer, AvgPool2d):
            parts += [bytes([TAG_POOL]), _u32(layer.size)]
        elif isinstance(layer, Flatten):
            parts.append(bytes([TAG_FLAT]))
        else:  # pragma: no cover - exhaustive over layer types
            raise TypeError(f"cannot serialise {type(layer).__name__}")
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.raw):
            raise DataError("checkpoint is truncated")
        out = self.raw[self.pos:self.pos + size]
        self.pos += size
        return out

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack("<" + "I" * count, self.take(4 * count))

    def f64(self, shape: tuple[int, ...]) -> np.ndarray:
        size = int(np.prod(shape))
        return np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)


def from_bytes(raw: bytes) -> Network:
    r = _Reader(raw)
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError("not a checkpoint (bad magic)")
    (version,) = r.u32()
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (ndim,) = r.u32()
    input_shape = r.u32(ndim)
    (count,) = r.u32()
    layers = []
    for _ in range(count):
        tag = r.take(1)[0]
        if tag == TAG_DENSE:
            shape = r.u32(2)
            layers.append(Dense(r.f64(shape)))
        elif tag == TAG_CONV:
            *kshape, padding = r.u32(5)
            kernel = r.f64(tuple(kshape))
            layers.append(Conv2d(kernel, r.f64((kshape[0],)), padding))
        elif tag == TAG_ACT:
            (code,) = r.u32()
            if code >= len(ACTIVATIONS):
                raise DataError(f"unknown activation code {code}")
            layers.append(Activation(ACTIVATIONS[code]))
        elif tag == TAG_POOL:
            layers.append(AvgPool2d(r.u32()[0]))
        elif tag == TAG_FLAT:
            layers.append(Flatten())
        else:
            raise DataError(f"unknown layer tag {tag}")
    if r.pos != len(raw):
        raise DataError("trailing bytes after checkpoint")
    return Network(layers, tuple(input_shape))


def save_checkpoint(net: Network, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load_checkpoint(path) -> Network:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(raw)
