"""Named weight snapshots: the binary format shared by trainers and eval.

Layout: u32 count, then per parameter: u32 name length, utf-8 name,
u32 ndim, u32 dims..., float32 little-endian values (row-major).
"""

import struct

import numpy as np

__all__ = ["write_params", "read_params"]


def write_params(fh, named) -> None:
    named = list(named)
    fh.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        raw = name.encode("utf-8")
        data = np.ascontiguousarray(tensor.data, dtype="<f4")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", data.ndim))
        fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
        fh.write(data.tobytes())


def read_params(fh) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", fh.read(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", fh.read(4))
        name = fh.read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(fh.read(4 * n), dtype="<f4").astype(np.float64)
        out[name] = values.reshape(shape)
    return out
