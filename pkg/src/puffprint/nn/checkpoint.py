"""Binary network checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes  b"PUFFNN\\x00\\x01"
    version    u32      currently 1
    input_dim  u32
    n_layers   u32
    meta_len   u32      length of a UTF-8 JSON metadata blob (may be 0)
    meta       meta_len bytes
    n_layers x layer record  "<BIIddd": kind, in_dim, out_dim, p0, p1, p2
    parameters: for each Dense layer, W (in*out, row-major) then b (out),
                as little-endian float64

``p0..p2`` carry the temperature for softmax layers and
``(m_bits, x_min, x_max)`` for quantize layers; they are zero otherwise.
"""

from __future__ import annotations

import io
import json
import os
import struct
from typing import Any

import numpy as np

from puffprint.nn.layers import Dense, Quantize, ReLU, Sigmoid, SoftmaxT
from puffprint.nn.network import Network
from puffprint.quantize import QuantSpec

MAGIC = b"PUFFNN\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<IIII")
_LAYER = struct.Struct("<BIIddd")
_KINDS = {"dense": 1, "relu": 2, "sigmoid": 3, "softmax": 4, "quantize": 5}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


class CheckpointError(ValueError):
    pass


def dumps(net: Network, metadata: dict[str, Any] | None = None) -> bytes:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_HEADER.pack(VERSION, net.input_dim, len(net.layers), len(meta)))
    buf.write(meta)
    dim = net.input_dim
    for layer in net.layers:
        out = layer.out_dim(dim)
        p = (0.0, 0.0, 0.0)
        if isinstance(layer, SoftmaxT):
            p = (layer.temperature, 0.0, 0.0)
        elif isinstance(layer, Quantize):
            p = (float(layer.spec.m_bits), layer.spec.x_min, layer.spec.x_max)
        buf.write(_LAYER.pack(_KINDS[layer.kind], dim, out, *p))
        dim = out
    for layer in net.layers:
        if isinstance(layer, Dense):
            buf.write(layer.W.astype("<f8").tobytes(order="C"))
            buf.write(layer.b.astype("<f8").tobytes(order="C"))
    return buf.getvalue()


def loads(data: bytes) -> tuple[Network, dict[str, Any]]:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a network checkpoint (bad magic)")
    pos = 8
    try:
        version, input_dim, n_layers, meta_len = _HEADER.unpack_from(view, pos)
    except struct.error:
        raise CheckpointError("truncated checkpoint header") from None
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += _HEADER.size
    metadata = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8")) if meta_len else {}
    pos += meta_len
    records = []
    for _ in range(n_layers):
        try:
            records.append(_LAYER.unpack_from(view, pos))
        except struct.error:
            raise CheckpointError("truncated layer table") from None
        pos += _LAYER.size
    layers = []
    for kind, d_in, d_out, p0, p1, p2 in records:
        name = _KIND_NAMES.get(kind)
        if name == "dense":
            count = d_in * d_out + d_out
            if pos + 8 * count > len(data):
                raise CheckpointError("truncated parameters")
            values = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            layers.append(Dense(d_in, d_out, weights=values[: d_in * d_out], bias=values[d_in * d_out:]))
        elif name == "relu":
            layers.append(ReLU())
        elif name == "sigmoid":
            layers.append(Sigmoid())
        elif name == "softmax":
            layers.append(SoftmaxT(p0))
        elif name == "quantize":
            layers.append(Quantize(QuantSpec(int(p0), p1, p2)))
        else:
            raise CheckpointError(f"unknown layer kind {kind}")
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes in checkpoint")
    return Network(layers, input_dim=input_dim), metadata


def save(net: Network, path: str | os.PathLike, metadata: dict[str, Any] | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(net, metadata))


def load(path: str | os.PathLike) -> tuple[Network, dict[str, Any]]:
    with open(path, "rb") as fh:
        return loads(fh.read())
