"""Binary checkpoint container.

Little-endian layout::

    b"MOMA1"                      magic, 5 bytes
    u32 version
    u32 len, bytes                config text (utf-8)
    u32 count, count x tensor     parameters
    u32 count, count x tensor     optimizer / rng / queue state

    tensor := u32 len, name bytes, u32 rank, rank x u64 extent, float64 values

The whole file is parsed before anything is returned, so a truncated or
corrupted file never yields partial state.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"MOMA1"
VERSION = 1


@dataclass
class Checkpoint:
    config_text: str
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    version: int = VERSION


def _pack_tensors(tensors):
    out = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        # asarray keeps rank 0; ascontiguousarray would promote scalars to (1,)
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def to_bytes(ckpt):
    text = ckpt.config_text.encode("utf-8")
    return b"".join([
        MAGIC,
        struct.pack("<I", ckpt.version),
        struct.pack("<I", len(text)), text,
        _pack_tensors(ckpt.params),
        _pack_tensors(ckpt.extras),
    ])


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, what):
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def tensors(self, what):
        count = self.u32(f"{what} count")
        out = {}
        for _ in range(count):
            name_raw = self.take(self.u32("name length"), "tensor name")
            try:
                name = name_raw.decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("tensor name is not valid utf-8") from None
            rank = self.u32(f"rank of {name}")
            if rank > 8:
                raise FormatError(f"implausible rank {rank} for {name}")
            shape = struct.unpack(f"<{rank}Q", self.take(8 * rank, f"shape of {name}"))
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            buf = self.take(8 * n, f"values of {name}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
        return out


def from_bytes(data):
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        text = r.take(r.u32("config length"), "config text").decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("config text is not valid utf-8") from None
    params = r.tensors("parameter")
    extras = r.tensors("state")
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(text, params, extras, version)


def save(path, ckpt):
    data = to_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
