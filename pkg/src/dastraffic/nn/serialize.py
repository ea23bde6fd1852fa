"""DASM model files.

Layout, little-endian::

    "DASM" | version u16 | head u8 | layer count u16
    | input dims u8 | input shape u32 * dims | feature layer i32
    then per layer: type u8 | hyper count u8 | hypers u32 * count
    | parameter count u8 | per parameter: dims u8, shape u32 * dims, f64 data

Dropout rates are stored as parts per million.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from ..waterfall import WaterfallFormatError, atomic_write
from .layers import Conv1D, Conv2D, Dense, Dropout, Flatten, MaxPool1D, MaxPool2D, ReLU
from .network import Network

MAGIC = b"DASM"
VERSION = 1
_HEADS = {"svm": 0, "softmax": 1}
_HEADS_INV = {v: k for k, v in _HEADS.items()}
_TYPES = [Conv1D, Conv2D, MaxPool1D, MaxPool2D, ReLU, Dropout, Flatten, Dense]
_CODE = {cls: i for i, cls in enumerate(_TYPES)}


class ModelFormatError(WaterfallFormatError):
    pass


def _hypers(layer):
    if isinstance(layer, Dropout):
        return [int(round(layer.rate * 1_000_000))]
    return [int(h) for h in layer.hyper()]


def _make(cls, h):
    if cls is Conv1D:
        return Conv1D(h[0], h[1], h[2])
    if cls is Conv2D:
        return Conv2D(h[0], (h[1], h[2]), (h[3], h[4]))
    if cls is MaxPool1D:
        return MaxPool1D(h[0])
    if cls is MaxPool2D:
        return MaxPool2D((h[0], h[1]))
    if cls is Dropout:
        return Dropout(h[0] / 1_000_000)
    if cls is Dense:
        return Dense(h[0])
    return cls()


def to_bytes(net):
    out = [struct.pack("<4sHBH", MAGIC, VERSION, _HEADS[net.head], len(net.layers))]
    out.append(struct.pack(f"<B{len(net.input_shape)}I", len(net.input_shape), *net.input_shape))
    out.append(struct.pack("<i", -1 if net.feature_layer is None else net.feature_layer))
    for layer in net.layers:
        h = _hypers(layer)
        out.append(struct.pack(f"<BB{len(h)}I", _CODE[type(layer)], len(h), *h))
        out.append(struct.pack("<B", len(layer.params)))
        for p in layer.params:
            out.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
            out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(out)


def save_model(net, path):
    atomic_write(path, to_bytes(net))


class _Reader:
    def __init__(self, data, source):
        self.data, self.pos, self.source = data, 0, source

    def take(self, fmt):
        s = struct.Struct(fmt)
        if self.pos + s.size > len(self.data):
            raise ModelFormatError(f"{self.source}: truncated model file")
        vals = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return vals

    def array(self, shape):
        n = int(np.prod(shape))
        if self.pos + 8 * n > len(self.data):
            raise ModelFormatError(f"{self.source}: truncated parameter blob")
        a = np.frombuffer(self.data, dtype="<f8", count=n, offset=self.pos)
        self.pos += 8 * n
        return a.reshape(shape).astype(np.float64)


def from_bytes(data, source="<bytes>"):
    r = _Reader(data, source)
    magic, version, head, n_layers = r.take("<4sHBH")
    if magic != MAGIC:
        raise ModelFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ModelFormatError(f"{source}: unsupported model version {version}")
    if head not in _HEADS_INV:
        raise ModelFormatError(f"{source}: unknown head code {head}")
    (dims,) = r.take("<B")
    input_shape = r.take(f"<{dims}I")
    (feature,) = r.take("<i")
    layers, params = [], []
    for _ in range(n_layers):
        code, nh = r.take("<BB")
        if code >= len(_TYPES):
            raise ModelFormatError(f"{source}: unknown layer type {code}")
        h = r.take(f"<{nh}I")
        layers.append(_make(_TYPES[code], h))
        (np_,) = r.take("<B")
        ps = []
        for _ in range(np_):
            (nd,) = r.take("<B")
            ps.append(r.array(r.take(f"<{nd}I")))
        params.append(ps)
    if r.pos != len(data):
        raise ModelFormatError(f"{source}: {len(data) - r.pos} trailing bytes")
    net = Network(input_shape, layers, head=_HEADS_INV[head],
                  feature_layer=None if feature < 0 else feature)
    for layer, ps in zip(net.layers, params):
        if [p.shape for p in layer.params] != [p.shape for p in ps]:
            raise ModelFormatError(f"{source}: parameter shapes do not fit {layer!r}")
        layer.params = ps
    return net


def load_model(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), os.fspath(path))
