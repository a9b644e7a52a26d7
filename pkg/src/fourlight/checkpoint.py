"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian uint32 header length, a JSON header
(format version, manifest, named parameter shapes in declaration order),
then the raw parameter blocks as 64-bit little-endian floats.
Files are written atomically (temp file + rename).
"""

import json
import os
import struct
import tempfile
from collections import OrderedDict

import numpy as np

MAGIC = b"FLCKPT01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or unsupported."""


def save_checkpoint(path, manifest, named_params):
    """Write manifest plus named parameter tensors to ``path`` atomically."""
    header = {
        "format_version": FORMAT_VERSION,
        "manifest": manifest,
        "params": [{"name": name, "shape": list(t.shape)}
                   for name, t in named_params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, t in named_params:
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read a checkpoint; returns (manifest, OrderedDict name -> ndarray)."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version "
                                  f"{header.get('format_version')}")
        params = OrderedDict()
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated parameter block "
                                      f"{entry['name']}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return header["manifest"], params
