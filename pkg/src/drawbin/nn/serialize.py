"""Model files.

Layout (all integers little-endian)::

    magic        8 bytes   b"DRAWBIN\\x00"
    version      u16
    arch_len     u32
    arch         arch_len bytes of JSON (levels, width, in_channels, block)
    fingerprint  32 bytes  SHA-256 of the layer list
    count        u64       number of stored reals
    weights      count x f32, layers in order, each weight tensor then its bias
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import Architecture, Model

MAGIC = b"DRAWBIN\x00"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def dumps(model: Model) -> bytes:
    arch_blob = json.dumps(asdict(model.arch), sort_keys=True).encode()
    flat = [model.params[name].astype("<f4").ravel() for name in model.parameter_names()]
    weights = np.concatenate(flat) if flat else np.zeros(0, dtype="<f4")
    return b"".join(
        [
            MAGIC,
            struct.pack("<HI", FORMAT_VERSION, len(arch_blob)),
            arch_blob,
            bytes.fromhex(model.arch.fingerprint()),
            struct.pack("<Q", weights.size),
            weights.tobytes(),
        ]
    )


def loads(data: bytes, expect: Architecture | None = None) -> Model:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ModelFormatError("truncated model file")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    version, arch_len = struct.unpack("<HI", take(6))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    try:
        arch = Architecture(**json.loads(take(arch_len)))
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"unreadable architecture header: {exc}") from exc
    fingerprint = take(32).hex()
    if fingerprint != arch.fingerprint():
        raise ModelFormatError("fingerprint does not match the stored architecture")
    if expect is not None and fingerprint != expect.fingerprint():
        raise ModelFormatError("model was built for a different architecture")
    (count,) = struct.unpack("<Q", take(8))
    weights = np.frombuffer(take(4 * count), dtype="<f4")
    if pos != len(data):
        raise ModelFormatError(f"{len(data) - pos} trailing bytes after weights")

    model = Model(arch)
    offset = 0
    for spec in arch.layers():
        for name, shape in ((f"{spec.name}.w", spec.weight_shape()), (f"{spec.name}.b", (spec.kernel[2],))):
            size = int(np.prod(shape))
            if offset + size > count:
                raise ModelFormatError("weight count does not match the architecture")
            model.params[name] = weights[offset : offset + size].astype(np.float64).reshape(shape)
            offset += size
    if offset != count:
        raise ModelFormatError("weight count does not match the architecture")
    return model


def save_model(model: Model, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model))


def load_model(path, expect: Architecture | None = None) -> Model:
    return loads(Path(path).read_bytes(), expect)
