"""Binary checkpoint files: named float64 arrays.

Layout (little-endian)::

    b"FFTGANCK"  u32 version  u32 count
    count x { u32 name_len, name (UTF-8), u32 rank, rank x u64 extent, f64 data }

Everything a run needs to continue (parameters, spectral-norm vectors,
optimizer moments, counters, the config text) is flattened into this one
name -> array mapping.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

MAGIC = b"FFTGANCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        a = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        chunks.append(np.ascontiguousarray(a).tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_arrays(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", raw, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos, out = 16, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{rank}Q", raw, pos + 4)
            pos += 4 + 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(raw):
                raise CheckpointError(f"{path}: truncated at {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file") from exc
    return out


def text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def array_to_text(a: np.ndarray) -> str:
    return np.asarray(a, dtype=np.uint8).tobytes().decode("utf-8")
