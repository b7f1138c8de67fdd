"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic        8 bytes   b"SLOTNET\\x00"
    version      uint32    1
    config_len   uint32    length of the UTF-8 JSON config block
    config       bytes     {"model": ..., plus any caller metadata}
    n_params     uint32
    per parameter:
        name_len uint16, name UTF-8 bytes
        ndim     uint8,  dims uint32 * ndim
        data     float32 little-endian, C order

Parameters are written in model order. Writing goes to a temporary file
that is renamed into place, so an interrupted save leaves the previous
checkpoint intact.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, SlotDetectorNet
from .tensor import Tensor

MAGIC = b"SLOTNET\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: SlotDetectorNet, meta: dict | None = None) -> bytes:
    config = {"model": model.config.to_dict()}
    if meta:
        config["meta"] = meta
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save(model: SlotDetectorNet, path, meta: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(model, meta))
    os.replace(tmp, path)


def loads(buf: bytes, dtype=np.float32) -> tuple[SlotDetectorNet, dict]:
    def need(pos, n, what):
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint reading {what} at byte {pos}")

    if buf[:8] != MAGIC:
        raise CheckpointError("not a slot detector checkpoint (bad magic)")
    need(8, 8, "header")
    version, clen = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    need(pos, clen, "config")
    config = json.loads(buf[pos:pos + clen].decode("utf-8"))
    pos += clen
    model = SlotDetectorNet(ModelConfig.from_dict(config["model"]), seed=0, dtype=dtype)
    need(pos, 4, "parameter count")
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    seen = set()
    for _ in range(count):
        need(pos, 2, "name length")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(pos, nlen + 1, "name")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        ndim = buf[pos]
        pos += 1
        need(pos, 4 * ndim, f"{name} shape")
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        need(pos, nbytes, f"{name} data")
        if name not in model.params:
            raise CheckpointError(f"unexpected parameter {name!r}")
        if tuple(model.params[name].shape) != tuple(shape):
            raise CheckpointError(f"{name}: stored shape {shape} != model shape {model.params[name].shape}")
        arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape)
        model.params[name] = Tensor(arr.astype(dtype), requires_grad=True)
        seen.add(name)
        pos += nbytes
    missing = set(model.params) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)}")
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after parameter blobs")
    return model, config.get("meta", {})


def load(path, dtype=np.float32) -> tuple[SlotDetectorNet, dict]:
    return loads(Path(path).read_bytes(), dtype=dtype)
