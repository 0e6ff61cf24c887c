"""2-D binary convolution over bit-packed operands, plus float references.

The packed kernel packs sign bits along the channel axis (one pixel's
channels per word group) and computes each window as
2 * popcount(a XNOR w) - n over the window's valid bits.  Zero-padding
positions contribute 0 to every window sum (tracked per window), which
makes the packed kernel agree exactly with an ordinary zero-padded
cross-correlation of the same +-1 values.

A numba kernel drives the packed path when numba is importable; a
vectorized numpy implementation of the identical algorithm is the
fallback, and both are covered by the exactness suite.
"""

from dataclasses import dataclass

import numpy as np

from .bitcore import PackedBitTensor, words_to_bits
from .errors import DimensionError

try:
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)
# filter-chunk cap for the numpy fallback's uint64 scratch (in words)
_CHUNK_WORDS = 4_000_000


@dataclass(frozen=True)
class ConvSpec:
    """Square-kernel 2-D convolution geometry."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.stride) < 1:
            raise DimensionError("in/out channels, kernel and stride must be >= 1")
        if self.padding < 0:
            raise DimensionError("padding must be >= 0")

    def out_hw(self, h, w):
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(
                f"input {h}x{w} too small for kernel {self.kernel}, "
                f"stride {self.stride}, padding {self.padding}"
            )
        return ho, wo


def _pack_channel_words(bits_nhwc):
    """[..., c] {0,1} -> [..., W] uint64 words, pad bits zero."""
    packed = np.packbits(bits_nhwc, axis=-1, bitorder="little")
    pad = (-packed.shape[-1]) % 8
    if pad:
        packed = np.concatenate(
            [packed, np.zeros(packed.shape[:-1] + (pad,), dtype=np.uint8)], axis=-1
        )
    return packed.view("<u8")


if _HAVE_NUMBA:
    _M1 = np.uint64(0x5555555555555555)
    _M2 = np.uint64(0x3333333333333333)
    _M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
    _H01 = np.uint64(0x0101010101010101)

    @njit(cache=True, inline="always")
    def _popcount_u64(v):
        v = v - ((v >> np.uint64(1)) & _M1)
        v = (v & _M2) + ((v >> np.uint64(2)) & _M2)
        v = (v + (v >> np.uint64(4))) & _M4
        return (v * _H01) >> np.uint64(56)

    @njit(cache=True, parallel=True)
    def _xnor_conv_kernel(apk, wtk, row_ok, col_ok, stride, cmask_last, c, out):
        nb, hp, wp, nw = apk.shape
        nf, k, _, _ = wtk.shape
        ho, wo = out.shape[2], out.shape[3]
        for b in prange(nb):
            for i in range(ho):
                for j in range(wo):
                    nval = 0
                    for dy in range(k):
                        if row_ok[i * stride + dy]:
                            for dx in range(k):
                                if col_ok[j * stride + dx]:
                                    nval += c
                    for f in range(nf):
                        cnt = np.uint64(0)
                        for dy in range(k):
                            yy = i * stride + dy
                            if not row_ok[yy]:
                                continue
                            for dx in range(k):
                                xx = j * stride + dx
                                if not col_ok[xx]:
                                    continue
                                for ww in range(nw):
                                    v = ~(apk[b, yy, xx, ww] ^ wtk[f, dy, dx, ww])
                                    if ww == nw - 1:
                                        v &= cmask_last
                                    cnt += _popcount_u64(v)
                        out[b, f, i, j] = 2 * np.int64(cnt) - nval


def _packed_conv_numpy(apk, wtk, valid, stride, cmask, c, nb, nf, ho, wo, k):
    acc = np.zeros((nb, nf, ho, wo), dtype=np.int64)
    nvalid = np.zeros((ho, wo), dtype=np.int64)
    nw = apk.shape[-1]
    step = max(1, _CHUNK_WORDS // max(1, nb * ho * wo * nw))
    for dy in range(k):
        for dx in range(k):
            sl = apk[:, dy : dy + (ho - 1) * stride + 1 : stride,
                     dx : dx + (wo - 1) * stride + 1 : stride, :]
            vv = valid[dy : dy + (ho - 1) * stride + 1 : stride,
                       dx : dx + (wo - 1) * stride + 1 : stride]
            nvalid += vv * c
            for f0 in range(0, nf, step):
                f1 = min(nf, f0 + step)
                xn = ~(sl[:, None] ^ wtk[None, f0:f1, dy, dx, :][:, :, None, None, :])
                xn &= cmask
                cnt = np.bitwise_count(xn).sum(axis=-1, dtype=np.int64)
                cnt *= vv
                acc[:, f0:f1] += cnt
    return 2 * acc - nvalid[None, None]


def packed_conv2d_bits(a_bits, w_bits, stride, padding):
    """Cross-correlate {0,1} sign bits with XNOR/popcount arithmetic.

    a_bits : uint8 [N, c, h, w], 1 encodes +1.
    w_bits : uint8 [n, c, k, k].
    Returns int64 [N, n, ho, wo]; padded positions contribute 0.
    """
    a_bits = np.asarray(a_bits, dtype=np.uint8)
    w_bits = np.asarray(w_bits, dtype=np.uint8)
    nb, c, h, w = a_bits.shape
    nf, cw, k, k2 = w_bits.shape
    if cw != c or k != k2:
        raise DimensionError(f"weight shape {w_bits.shape} incompatible with input")
    spec = ConvSpec(c, nf, k, stride, padding)
    ho, wo = spec.out_hw(h, w)
    p = padding

    hp, wp = h + 2 * p, w + 2 * p
    ap = np.zeros((nb, hp, wp, c), dtype=np.uint8)
    ap[:, p : p + h, p : p + w, :] = a_bits.transpose(0, 2, 3, 1)
    apk = _pack_channel_words(ap)
    wtk = _pack_channel_words(np.ascontiguousarray(w_bits.transpose(0, 2, 3, 1)))

    nw = apk.shape[-1]
    cmask = np.full(nw, _ALL_ONES, dtype=np.uint64)
    if c % 64:
        cmask[-1] = np.uint64((1 << (c % 64)) - 1)

    row_ok = np.zeros(hp, dtype=np.uint8)
    row_ok[p : p + h] = 1
    col_ok = np.zeros(wp, dtype=np.uint8)
    col_ok[p : p + w] = 1

    if _HAVE_NUMBA:
        out = np.empty((nb, nf, ho, wo), dtype=np.int64)
        _xnor_conv_kernel(apk, wtk, row_ok, col_ok, stride, cmask[-1], c, out)
        return out
    valid = (row_ok[:, None] & col_ok[None, :]).astype(np.int64)
    return _packed_conv_numpy(apk, wtk, valid, stride, cmask, c, nb, nf, ho, wo, k)


def binary_conv2d(a, w, spec):
    """Binary convolution of packed +-1 activations with packed weights.

    a : PackedBitTensor [c, h, w];  w : PackedBitTensor [n, c, k, k].
    Returns the integer-valued window sums as a float64 array [n, ho, wo].
    """
    if not isinstance(a, PackedBitTensor) or not isinstance(w, PackedBitTensor):
        raise DimensionError("binary_conv2d expects PackedBitTensor operands")
    if len(a.shape) != 3 or len(w.shape) != 4:
        raise DimensionError(f"bad ranks: a{a.shape}, w{w.shape}")
    c, h, wd = a.shape
    n, cw, k, k2 = w.shape
    if (
        c != spec.in_channels
        or n != spec.out_channels
        or cw != c
        or k != spec.kernel
        or k2 != spec.kernel
    ):
        raise DimensionError(f"operands a{a.shape}, w{w.shape} do not match {spec}")
    a_bits = words_to_bits(a.words.reshape(1, -1), a.n).reshape(a.shape)
    w_bits = words_to_bits(w.words.reshape(1, -1), w.n).reshape(w.shape)
    out = packed_conv2d_bits(a_bits[None], w_bits, spec.stride, spec.padding)
    return out[0].astype(np.float64)


def _patches(x, k, stride):
    """[N,C,Hp,Wp] -> [N, ho, wo, C, k, k] sliding windows."""
    v = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]
    return v.transpose(0, 2, 3, 1, 4, 5)


def conv2d_float(x, w, stride=1, padding=0):
    """Dense zero-padded cross-correlation.

    x : [N, C, H, W];  w : [n, C, k, k].  Accumulates in the promoted
    dtype of the operands (pass float64 operands for reference accuracy).
    """
    x = np.asarray(x)
    w = np.asarray(w)
    nb, c, h, wd = x.shape
    n, cw, k, _ = w.shape
    if cw != c:
        raise DimensionError(f"weight channels {cw} != input channels {c}")
    spec = ConvSpec(c, n, k, stride, padding)
    ho, wo = spec.out_hw(h, wd)
    p = padding
    dtype = np.result_type(x.dtype, w.dtype, np.float32)
    xp = np.zeros((nb, c, h + 2 * p, wd + 2 * p), dtype=dtype)
    xp[:, :, p : p + h, p : p + wd] = x
    w = w.astype(dtype, copy=False)
    if stride == 1:
        # accumulate in [n, nb, ho, wo] so every += hits contiguous memory
        out = np.zeros((n, nb, ho, wo), dtype=dtype)
        for dy in range(k):
            for dx in range(k):
                xs = xp[:, :, dy : dy + ho, dx : dx + wo]
                out += np.tensordot(w[:, :, dy, dx], xs, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    pat = np.ascontiguousarray(_patches(xp, k, stride)).reshape(nb * ho * wo, -1)
    y = pat @ w.reshape(n, -1).T
    return y.reshape(nb, ho, wo, n).transpose(0, 3, 1, 2)


def conv2d_backward_input(g, w, padding, stride=1):
    """Gradient of conv2d_float w.r.t. its input (stride 1 only)."""
    if stride != 1:
        raise DimensionError("input gradient implemented for stride 1 only")
    w = np.asarray(w)
    k = w.shape[-1]
    w_t = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return conv2d_float(g, w_t, stride=1, padding=k - 1 - padding)


def conv2d_backward_weight(x, g, kernel, padding, stride=1):
    """Gradient of conv2d_float w.r.t. its weights (stride 1 only)."""
    if stride != 1:
        raise DimensionError("weight gradient implemented for stride 1 only")
    x = np.asarray(x)
    g = np.asarray(g)
    nb, c, h, wd = x.shape
    n, ho, wo = g.shape[1:]
    p = padding
    dtype = np.result_type(x.dtype, g.dtype, np.float32)
    xp = np.zeros((nb, c, h + 2 * p, wd + 2 * p), dtype=dtype)
    xp[:, :, p : p + h, p : p + wd] = x
    g = g.astype(dtype, copy=False)
    gw = np.empty((n, c, kernel, kernel), dtype=dtype)
    for dy in range(kernel):
        for dx in range(kernel):
            xs = xp[:, :, dy : dy + ho, dx : dx + wo]
            gw[:, :, dy, dx] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def float_pm1_conv2d_oracle(a, w, spec):
    """Direct dense cross-correlation reference for binary_conv2d.

    Also serves arbitrary real operands (full-precision stem/head layers).
    Accumulates in float64, well within 1e-6 relative of pairwise summation.
    """
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if a.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"bad ranks: a{a.shape}, w{w.shape}")
    if (
        a.shape[0] != spec.in_channels
        or w.shape[0] != spec.out_channels
        or w.shape[1] != spec.in_channels
        or w.shape[2] != spec.kernel
        or w.shape[3] != spec.kernel
    ):
        raise DimensionError(f"operands a{a.shape}, w{w.shape} do not match {spec}")
    return conv2d_float(a[None], w, spec.stride, spec.padding)[0]
