"""Binary tensor container.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then each
array as little-endian float64 in sorted-name order. The header carries
``names``, ``shapes``, ``step``, ``seed`` and any extra metadata.
"""

import json
import struct

import numpy as np

_LEN = struct.Struct("<Q")


def save_arrays(path, arrays, step=0, seed=None, meta=None):
    names = sorted(arrays)
    header = {
        "names": names,
        "shapes": [list(np.shape(arrays[n])) for n in names],
        "step": int(step),
        "seed": seed,
    }
    if meta:
        header["meta"] = meta
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_arrays(path):
    """Return ``(arrays, header)``."""
    with open(path, "rb") as fh:
        (n,) = _LEN.unpack(fh.read(_LEN.size))
        header = json.loads(fh.read(n).decode("utf-8"))
        arrays = {}
        for name, shape in zip(header["names"], header["shapes"]):
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError(f"{path}: truncated payload for {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return arrays, header
