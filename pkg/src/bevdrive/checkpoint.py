"""Binary checkpoint format for named parameter tensors.

Layout (little-endian): magic b"BEVD", u32 format version, u32 tensor count,
then per tensor: u16 name length + UTF-8 name, u8 rank, u32 per dim,
row-major float32 payload.
"""
import struct

import numpy as np

MAGIC = b"BEVD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, named_arrays):
    """Write {name: array-like} sorted by name; values stored as float32."""
    items = sorted(named_arrays.items())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            data = np.ascontiguousarray(getattr(arr, "data", arr), dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<I", d))
            f.write(data.tobytes())


def load(path):
    """Read a checkpoint back into {name: float32 ndarray}."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            out[name] = arr.copy()
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({e})")
    return out
