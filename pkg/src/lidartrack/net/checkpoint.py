"""Single-file model checkpoint.

Layout (little-endian)::

    b"LTNET\\0"  uint32 version  uint32 meta_len  meta (UTF-8 JSON)
    uint32 n_arrays
    per array: uint16 name_len, name, uint8 ndim, uint32 dims[ndim], float32 data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import NetArch, NetworkParams

MAGIC = b"LTNET\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _arrays(params: NetworkParams, adam: dict | None):
    for k, v in params.weights.items():
        yield f"param/{k}", v
    for k, stats in params.running.items():
        for n, v in stats.items():
            yield f"running/{k}/{n}", v
    if adam is not None:
        for k, v in adam["m"].items():
            yield f"adam_m/{k}", v
        for k, v in adam["v"].items():
            yield f"adam_v/{k}", v


def save_checkpoint(path, params: NetworkParams, adam: dict | None = None, meta: dict | None = None):
    meta = dict(meta or {})
    meta["arch"] = params.arch.to_dict()
    if adam is not None:
        meta["adam_t"] = adam["t"]
    blob = json.dumps(meta, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    arrays = list(_arrays(params, adam))
    out.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path):
    """Return ``(params, adam_state_or_None, meta)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    pos = len(MAGIC)
    version, mlen = struct.unpack_from("<II", raw, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos += 8
    meta = json.loads(raw[pos:pos + mlen])
    pos += mlen
    (n,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    weights, running, m, v = {}, {}, {}, {}
    for _ in range(n):
        (nl,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nl].decode()
        pos += nl
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
        kind, _, key = name.partition("/")
        if kind == "param":
            weights[key] = arr
        elif kind == "running":
            block, _, stat = key.rpartition("/")
            running.setdefault(block, {})[stat] = arr
        elif kind == "adam_m":
            m[key] = arr
        elif kind == "adam_v":
            v[key] = arr
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    params = NetworkParams(NetArch.from_dict(meta.pop("arch")), weights, running)
    adam = {"t": meta.pop("adam_t"), "m": m, "v": v} if "adam_t" in meta else None
    return params, adam, meta
