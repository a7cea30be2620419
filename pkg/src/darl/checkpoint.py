"""Binary checkpoint format for named float64 array groups.

Layout (little-endian): magic "DARL", version u32, group count u32, then per
group: name length u32, UTF-8 name, rank u32, extents u32 * rank, f64 data.
Round-trips are bit-exact.
"""

import struct

import numpy as np

MAGIC = b"DARL"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_groups(path, groups):
    """groups: ordered dict/list of (name, ndarray)."""
    items = list(groups.items()) if hasattr(groups, "items") else list(groups)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            # note: asarray, not ascontiguousarray, to keep 0-d shapes intact
            arr = np.asarray(arr, dtype=np.float64)
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack("<%dI" % arr.ndim, *arr.shape))
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_groups(path):
    """Returns dict name -> float64 ndarray, in file order."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError("bad magic %r in %s" % (magic, path))
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise CheckpointError("unsupported checkpoint version %d" % version)
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack("<%dI" % rank, f.read(4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = data.astype(np.float64)
        return out
