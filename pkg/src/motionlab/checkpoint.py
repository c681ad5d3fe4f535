"""Flat named-parameter checkpoint file (see README for the byte layout)."""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import TapeTensor

__all__ = ["save_params", "load_params"]

_MAGIC = b"MLPARAM1"


def save_params(path, params: dict) -> None:
    """Write name -> array pairs; accepts TapeTensors or plain arrays."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            arr = value.values if isinstance(value, TapeTensor) else np.asarray(value)
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    """Bit-exact inverse of save_params."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a parameter checkpoint file")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8")
            out[name] = data.reshape(shape).copy()
    return out
