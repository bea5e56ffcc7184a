"""Binary checkpoint format.

Layout (all integers u64 little-endian): magic ``UCAP1``, entry count, then per
entry the UTF-8 name length, name bytes, rank, dims, and the f64 data in
row-major order.
"""

import os
import struct
import tempfile

import numpy as np

MAGIC = b"UCAP1"


def dumps(arrays):
    parts = [MAGIC, struct.pack("<Q", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<Q", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob):
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError("not a UCAP1 checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<Q", take(8))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<Q", take(8))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        out[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(blob):
        raise ValueError("trailing bytes after checkpoint entries")
    return out


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, arrays):
    atomic_write_bytes(path, dumps(arrays))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
