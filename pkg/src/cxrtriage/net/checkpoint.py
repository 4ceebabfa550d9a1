"""Binary checkpoints: a magic-tagged, versioned bundle of named tensors.

Layout (all integers little-endian):
  4 bytes   magic "CXRT"
  u32       format version (currently 1)
  u32       length of the config JSON blob
  bytes     config JSON (sorted keys, UTF-8)
  u32       tensor count
  per tensor, sorted by name:
    u16     name length, then the UTF-8 name
    u8      ndim, then u32 per dimension
    bytes   float64 little-endian data, C order

Round trips are bit-exact: every float64 is stored verbatim.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CXRT"
VERSION = 1


def save_checkpoint(path, config, params):
    """Serialize a config dict and a {name: array} registry."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    config_json = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(config_json))
    blob += config_json
    blob += struct.pack("<I", len(params))
    for name in sorted(params):
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]!r}...")
        tensor = np.ascontiguousarray(params[name], dtype=np.float64)
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", tensor.ndim)
        blob += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        blob += tensor.astype("<f8", copy=False).tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, count):
        if self.pos + count > len(self.data):
            raise ValueError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Read a checkpoint back as (config dict, {name: float64 array})."""
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise ValueError(
            f"{path}: unsupported checkpoint version {version}")
    (config_len,) = reader.unpack("<I")
    config = json.loads(reader.take(config_len).decode("utf-8"))
    (count,) = reader.unpack("<I")
    params = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = reader.take(size * 8)
        params[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    if reader.pos != len(reader.data):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    return config, params
