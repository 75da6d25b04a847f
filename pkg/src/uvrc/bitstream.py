"""The UVRC container: a 32-byte header followed by the z and y payloads.

Layout (little-endian)::

    offset size field
    0      4    magic "UVRC"
    4      1    version
    5      1    architecture id (0 factorized, 1 hyperprior, 2 attention_lite)
    6      1    metric flag (0 mse, 1 ms_ssim)
    7      1    reserved, zero
    8      8    model fingerprint u64
    16     4    scale factor s, float32
    20     2    original height u16
    22     2    original width u16
    24     4    len_z u32
    28     4    len_y u32
    32     ...  payload_z, then payload_y

For the factorized architecture ``len_z`` is 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import CorruptStreamError
from .model import ARCHITECTURES, METRICS

MAGIC = b"UVRC"
VERSION = 1
_HEADER = struct.Struct("<4sBBBBQfHHII")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class CompressedFile:
    architecture_id: str
    metric: str
    fingerprint: int
    scale: float
    height: int
    width: int
    payload_z: bytes
    payload_y: bytes
    version: int = VERSION

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            MAGIC,
            self.version,
            ARCHITECTURES.index(self.architecture_id),
            METRICS.index(self.metric),
            0,
            self.fingerprint,
            self.scale,
            self.height,
            self.width,
            len(self.payload_z),
            len(self.payload_y),
        )
        return header + self.payload_z + self.payload_y

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedFile":
        data = bytes(data)
        if len(data) < HEADER_SIZE:
            raise CorruptStreamError("file shorter than the header")
        magic, version, arch, metric, reserved, fp, s, h, w, lz, ly = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptStreamError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CorruptStreamError(f"unsupported version {version}")
        if arch >= len(ARCHITECTURES) or metric >= len(METRICS) or reserved:
            raise CorruptStreamError("invalid header flags")
        if not (0.0 < s <= 1.0) or h < 1 or w < 1:
            raise CorruptStreamError("invalid header values")
        if HEADER_SIZE + lz + ly != len(data):
            raise CorruptStreamError("payload lengths do not match the file size")
        pz = data[HEADER_SIZE : HEADER_SIZE + lz]
        py = data[HEADER_SIZE + lz :]
        return cls(ARCHITECTURES[arch], METRICS[metric], fp, s, h, w, pz, py, version)

    def __len__(self) -> int:
        return HEADER_SIZE + len(self.payload_z) + len(self.payload_y)

    def bpp(self) -> float:
        return 8.0 * len(self) / (self.height * self.width)


def write_file(f: CompressedFile, path) -> None:
    with open(path, "wb") as fh:
        fh.write(f.to_bytes())


def read_file(path) -> CompressedFile:
    with open(path, "rb") as fh:
        return CompressedFile.from_bytes(fh.read())
