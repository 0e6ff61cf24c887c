"""Bit-exact on-disk snapshot of named tensors.

Layout (all integers little-endian): magic "BIIS", u32 format version,
u32 record count, then per record: u32 name length, UTF-8 name, u32 dtype
code (0 = float32, 1 = packed-bit), u32 rank, u32 extents, raw payload.
Float payloads are little-endian float32; packed-bit payloads are the
logical bits in little bit order padded with zero bits to whole bytes.
Save -> load -> save is byte-identical.
"""

import struct

import numpy as np

from .bitcore import PackedBitTensor, bits_to_words, words_to_bits
from .errors import FormatError

MAGIC = b"BIIS"
VERSION = 1
DTYPE_FLOAT32 = 0
DTYPE_PACKED_BIT = 1


def _packed_payload(t):
    bits = words_to_bits(t.words.reshape(1, -1), t.n)
    return np.packbits(bits, axis=-1, bitorder="little").tobytes()


def save_checkpoint(path, records):
    """Write (name, tensor) records; tensors are float arrays (stored as
    float32) or PackedBitTensor values (stored packed)."""
    records = list(records)
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(records))
    for name, obj in records:
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        if isinstance(obj, PackedBitTensor):
            shape = obj.shape
            buf += struct.pack("<II", DTYPE_PACKED_BIT, len(shape))
            buf += struct.pack(f"<{len(shape)}I", *shape) if shape else b""
            buf += _packed_payload(obj)
        else:
            arr = np.asarray(obj, dtype="<f4")
            shape = arr.shape
            buf += struct.pack("<II", DTYPE_FLOAT32, len(shape))
            buf += struct.pack(f"<{len(shape)}I", *shape) if shape else b""
            buf += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {what}", len(self.data))
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path):
    """Read records back as (name, float32 array | PackedBitTensor) pairs."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic (expected {MAGIC!r})", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    count = r.u32("record count")
    records = []
    for _ in range(count):
        name_len = r.u32("name length")
        name_pos = r.pos
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("undecodable record name", name_pos) from None
        dtype_pos = r.pos
        dtype = r.u32("dtype code")
        rank = r.u32("rank")
        shape = tuple(r.u32("extent") for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if dtype == DTYPE_FLOAT32:
            payload = r.take(4 * n, f"payload of {name}")
            arr = np.frombuffer(payload, dtype="<f4", count=n).reshape(shape)
            records.append((name, arr.copy()))
        elif dtype == DTYPE_PACKED_BIT:
            nbytes = (n + 7) // 8
            payload = r.take(nbytes, f"payload of {name}")
            bits = np.unpackbits(
                np.frombuffer(payload, dtype=np.uint8), bitorder="little"
            )[:n]
            words = bits_to_words(bits.reshape(1, -1))[0]
            records.append((name, PackedBitTensor(shape=shape, words=words)))
        else:
            raise FormatError(f"unknown dtype code {dtype} for {name}", dtype_pos)
    return records
