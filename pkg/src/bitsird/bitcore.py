"""Bit-packed {-1,+1} tensors and the XNOR/popcount primitives.

Values are stored one bit per element in 64-bit words: bit = 1 encodes +1,
bit = 0 encodes -1, row-major logical order, padding bits in the final word
forced to zero.  All public operations are pure.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError

WORD_BITS = 64
_WORD_BYTES = WORD_BITS // 8
_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)

# Mutation-testing hook used by the self-check CLI: when enabled, the sign
# convention at exactly zero is flipped so the oracle suites must fail.
_sign_zero_fault = False


def set_sign_zero_fault(enabled):
    """Flip the sign-of-zero convention (self-check fault injection only)."""
    global _sign_zero_fault
    _sign_zero_fault = bool(enabled)


def sign_bits(x):
    """0/1 bit per element: 1 where the sign quantizer maps to +1."""
    x = np.asarray(x)
    if _sign_zero_fault:
        return (x > 0).astype(np.uint8)
    return (x >= 0).astype(np.uint8)


def sign_pm1(x, dtype=np.float64):
    """Elementwise sign with sign(0) = +1, as +-1 values of `dtype`."""
    x = np.asarray(x)
    one = np.asarray(1, dtype=dtype)
    neg = np.asarray(-1, dtype=dtype)
    if _sign_zero_fault:
        return np.where(x > 0, one, neg)
    return np.where(x >= 0, one, neg)


@dataclass(frozen=True)
class PackedBitTensor:
    """+-1 tensor stored one bit per element in uint64 words.

    shape : logical extents; element count n = prod(shape).
    words : 1-D uint64 array of length ceil(n / 64); padding bits are zero.
    """

    shape: tuple
    words: np.ndarray

    @property
    def n(self):
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    def __eq__(self, other):
        if not isinstance(other, PackedBitTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.words, other.words)


def _words_for(n):
    return (n + WORD_BITS - 1) // WORD_BITS


def bits_to_words(bits):
    """Pack a 2-D {0,1} uint8 array row-wise into uint64 words.

    Rows are padded with zero bits up to a whole number of words, so each
    row occupies ceil(row_bits / 64) words and padding bits are zero.
    """
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    rows, nbits = bits.shape
    packed = np.packbits(bits, axis=-1, bitorder="little")
    nbytes = packed.shape[-1]
    pad = (-nbytes) % _WORD_BYTES
    if pad:
        packed = np.concatenate(
            [packed, np.zeros((rows, pad), dtype=np.uint8)], axis=-1
        )
    return packed.view("<u8")


def words_to_bits(words, nbits):
    """Inverse of bits_to_words for a 2-D word array; returns [rows, nbits]."""
    raw = np.ascontiguousarray(words).view(np.uint8)
    bits = np.unpackbits(raw, axis=-1, bitorder="little")
    return bits[:, :nbits]


def popcount(words):
    """Per-word set-bit count as int64."""
    return np.bitwise_count(words).astype(np.int64)


def tail_mask(n):
    """Mask array selecting the n valid bits of a ceil(n/64)-word buffer."""
    nw = _words_for(n)
    mask = np.full(nw, _ALL_ONES, dtype=np.uint64)
    rem = n % WORD_BITS
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


def pack_bits(values):
    """Pack a sequence/array of +-1 values into a PackedBitTensor.

    Raises InvalidInputError if any element is outside {-1, +1}.
    """
    arr = np.asarray(values)
    if arr.size == 0:
        raise DimensionError("cannot pack an empty tensor")
    flat = arr.reshape(1, -1)
    if not np.all(np.isin(flat, (-1, 1))):
        raise InvalidInputError("pack_bits requires every element in {-1, +1}")
    bits = (flat == 1).astype(np.uint8)
    words = bits_to_words(bits)[0]
    return PackedBitTensor(shape=tuple(arr.shape), words=words)


def unpack_bits(t, dtype=np.int8):
    """Unpack a PackedBitTensor back to a +-1 array of its logical shape."""
    bits = words_to_bits(t.words.reshape(1, -1), t.n)[0]
    out = bits.astype(dtype) * 2 - 1
    return out.reshape(t.shape)


def sign_quantize(x):
    """Binarize a real tensor: +1 where x >= 0, -1 where x < 0, bit-packed.

    Raises InvalidInputError on non-finite input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DimensionError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("sign_quantize requires finite input")
    bits = sign_bits(x).reshape(1, -1)
    words = bits_to_words(bits)[0]
    return PackedBitTensor(shape=tuple(x.shape), words=words)


def xnor_dot(a, w):
    """Signed dot product of two +-1 packed tensors.

    Computed as 2 * popcount(a XNOR w, masked to the n valid bits) - n,
    which equals sum_i a[i] * w[i] exactly.
    """
    if a.shape != w.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {w.shape}")
    n = a.n
    xnor = ~(a.words ^ w.words) & tail_mask(n)
    return int(2 * popcount(xnor).sum() - n)
