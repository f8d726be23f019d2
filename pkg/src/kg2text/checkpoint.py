"""Binary checkpoint format.

Layout (little-endian)::

    b"KG2T" | u32 version | u32 n | n bytes UTF-8 JSON header
    repeated: u32 n | n bytes UTF-8 array name | u64 count | count float64
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"KG2T"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    header: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.header["step"])

    def params(self) -> dict[str, np.ndarray]:
        return {k[len("param/"):]: v for k, v in self.arrays.items() if k.startswith("param/")}

    def to_bytes(self) -> bytes:
        header = dict(self.header)
        header["shapes"] = {k: list(v.shape) for k, v in self.arrays.items()}
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
        for name, arr in self.arrays.items():
            raw = name.encode("utf-8")
            flat = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
            parts += [struct.pack("<I", len(raw)), raw, struct.pack("<Q", flat.size), flat.tobytes()]
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < 16 or data[:4] != MAGIC:
            raise CheckpointError("not a KG2T checkpoint (bad magic)")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise CheckpointError("checkpoint CRC mismatch")
        version, n = struct.unpack_from("<II", body, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        header = json.loads(body[off : off + n].decode("utf-8"))
        off += n
        shapes = header.pop("shapes")
        arrays = {}
        while off < len(body):
            (ln,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off : off + ln].decode("utf-8")
            off += ln
            (count,) = struct.unpack_from("<Q", body, off)
            off += 8
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=off).astype(np.float64)
            off += 8 * count
            arrays[name] = arr.reshape(shapes[name])
        return cls(header, arrays)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
