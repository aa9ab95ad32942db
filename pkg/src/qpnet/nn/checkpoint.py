"""``QPW1`` parameter checkpoints.

Layout (little-endian): magic ``QPW1``; u32 descriptor length; UTF-8 JSON
descriptor; u32 blob count; then per blob: u16 name length, UTF-8 name,
u8 ndim, ndim x u32 dims, float64 data in C order.
"""

import json
import struct

import numpy as np

from ..exceptions import FormatError

MAGIC = b"QPW1"


def dumps_checkpoint(descriptor, arrays):
    desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(desc)), desc, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads_checkpoint(blob):
    if blob[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    try:
        pos = 4
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        descriptor = json.loads(blob[pos : pos + n].decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + klen].decode("utf-8")
            pos += klen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            arrays[name] = data.reshape(shape).astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise FormatError("trailing bytes after checkpoint blobs")
    return descriptor, arrays


def save_checkpoint(path, descriptor, arrays):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(descriptor, arrays))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
