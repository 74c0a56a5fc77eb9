"""The ``nnp1`` parameter container.

Layout (all integers little-endian)::

    b"nnp1"  u32 version  u32 meta_len  meta (UTF-8 JSON)
    u32 count
    count x [u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dim]
    float64 payload, tensors concatenated in table order

Tensor names carry a section tag prefix such as ``clf/``, ``enc/``, ``den/``,
``flow/`` or ``sched/``.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"nnp1"
VERSION = 1


class ContainerError(ValueError):
    pass


def dump_params(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    arrays = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        arrays.append(arr)
    for arr in arrays:
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def parse_params(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise ContainerError("not an nnp1 container")
    off = 4
    try:
        version, meta_len = struct.unpack_from("<II", blob, off)
        off += 8
        if version != VERSION:
            raise ContainerError(f"unsupported nnp1 version {version}")
        meta = json.loads(blob[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        table = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            table.append((name, shape))
    except struct.error as exc:
        raise ContainerError(f"truncated nnp1 header: {exc}") from None
    tensors = {}
    for name, shape in table:
        size = int(np.prod(shape, dtype=np.int64))
        end = off + 8 * size
        if end > len(blob):
            raise ContainerError(f"truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(blob[off:end], dtype="<f8").reshape(shape).astype(np.float64)
        off = end
    if off != len(blob):
        raise ContainerError(f"{len(blob) - off} trailing bytes after payload")
    return meta, tensors


def save_params(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dump_params(tensors, meta))
    return path


def load_params(path) -> tuple[dict, dict[str, np.ndarray]]:
    return parse_params(Path(path).read_bytes())


def module_tensors(module, section: str) -> dict[str, np.ndarray]:
    """State of a torch module as numpy arrays under ``section/``."""
    return {f"{section}/{k}": v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module_tensors(module, tensors: dict[str, np.ndarray], section: str) -> None:
    import torch

    prefix = f"{section}/"
    state = {k[len(prefix) :]: torch.from_numpy(v.copy()) for k, v in tensors.items() if k.startswith(prefix)}
    module.load_state_dict(state)
