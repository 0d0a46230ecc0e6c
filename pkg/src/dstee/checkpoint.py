"""Portable checkpoint container for sparse layers.

Layout: a UTF-8 text manifest terminated by the line ``end``, then for every
layer in order

* weights     - little-endian float32, row-major
* bias        - little-endian float32 (only when the layer has one)
* mask        - bit-packed, little bit order, ``ceil(size / 8)`` bytes
* ever_active - bit-packed, same layout as the mask
* counter     - little-endian uint32

Saving a loaded checkpoint reproduces the original file byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .numerics import Dense, NetworkSpec, Params
from .sparsity import MaskedTensor

MAGIC = "dstee-checkpoint 1"


@dataclass
class Checkpoint:
    net: NetworkSpec
    layers: list[MaskedTensor]
    biases: list[np.ndarray | None]
    seed: int = 0
    round_index: int = 0
    iteration: int = 0

    @property
    def params(self) -> Params:
        return Params([layer.values for layer in self.layers], self.biases)


def _manifest(ckpt: Checkpoint) -> str:
    lines = [MAGIC, f"seed {ckpt.seed}", f"round {ckpt.round_index}",
             f"iteration {ckpt.iteration}", f"layers {len(ckpt.layers)}"]
    for i, (spec, layer) in enumerate(zip(ckpt.net.layers, ckpt.layers)):
        lines.append(
            f"layer {i} shape {spec.n_in}x{spec.n_out} bias {int(spec.has_bias)} "
            f"activation {spec.activation} active {layer.active} "
            f"explored {int(np.count_nonzero(layer.ever_active))}"
        )
    lines.append("end")
    return "\n".join(lines) + "\n"


def to_bytes(ckpt: Checkpoint) -> bytes:
    chunks = [_manifest(ckpt).encode()]
    for spec, layer, bias in zip(ckpt.net.layers, ckpt.layers, ckpt.biases):
        chunks.append(np.ascontiguousarray(layer.values, dtype="<f4").tobytes())
        if spec.has_bias:
            chunks.append(np.ascontiguousarray(bias, dtype="<f4").tobytes())
        chunks.append(np.packbits(layer.mask.reshape(-1), bitorder="little").tobytes())
        chunks.append(np.packbits(layer.ever_active.reshape(-1), bitorder="little").tobytes())
        counter = layer.counter.reshape(-1)
        if counter.size and (counter.min() < 0 or counter.max() > np.iinfo(np.uint32).max):
            raise FormatError("counter value does not fit in uint32")
        chunks.append(counter.astype("<u4").tobytes())
    return b"".join(chunks)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def _parse_manifest(raw: bytes):
    end = raw.find(b"\nend\n")
    if not raw.startswith(MAGIC.encode() + b"\n") or end < 0:
        raise FormatError("not a dstee checkpoint (bad magic or missing manifest end)", offset=0)
    body = end + len(b"\nend\n")
    meta, layer_specs = {}, []
    try:
        for line in raw[:end].decode().splitlines()[1:]:
            parts = line.split()
            if parts[0] == "layer":
                fields = dict(zip(parts[2::2], parts[3::2]))
                n_in, n_out = (int(v) for v in fields["shape"].split("x"))
                layer_specs.append(Dense(n_in, n_out, fields["bias"] == "1", fields["activation"]))
            else:
                meta[parts[0]] = int(parts[1])
    except (KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"malformed checkpoint manifest: {exc}", offset=0) from exc
    if meta.get("layers") != len(layer_specs):
        raise FormatError("manifest layer count does not match layer lines", offset=0)
    return meta, layer_specs, body


def from_bytes(raw: bytes) -> Checkpoint:
    meta, specs, pos = _parse_manifest(raw)
    net = NetworkSpec(tuple(specs))

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(raw):
            raise FormatError(f"truncated checkpoint, expected {pos + nbytes} bytes, got {len(raw)}",
                              offset=len(raw))
        chunk = raw[pos:pos + nbytes]
        pos += nbytes
        return chunk

    layers, biases = [], []
    for spec in specs:
        shape = spec.weight_shape
        size = spec.n_in * spec.n_out
        values = np.frombuffer(take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
        bias = np.frombuffer(take(4 * spec.n_out), "<f4").astype(np.float32) if spec.has_bias else None
        nbits = (size + 7) // 8
        mask = np.unpackbits(np.frombuffer(take(nbits), np.uint8), count=size, bitorder="little")
        ever = np.unpackbits(np.frombuffer(take(nbits), np.uint8), count=size, bitorder="little")
        counter = np.frombuffer(take(4 * size), "<u4").astype(np.int64).reshape(shape)
        layers.append(MaskedTensor(values, mask.astype(bool).reshape(shape), counter,
                                   ever.astype(bool).reshape(shape)))
        biases.append(bias)
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after last layer", offset=pos)
    return Checkpoint(net, layers, biases, meta.get("seed", 0), meta.get("round", 0),
                      meta.get("iteration", 0))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
