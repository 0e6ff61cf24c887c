"""Dot binary convolution: 1x1 depthwise binarized multiply.

The channel weight vector w is folded into a packed sign vector W_b plus
two derived scalars (beta = mean(w), alpha = ||w - beta||_2).  The layer
output decomposes as

    Y = alpha * |a| * (sign(a) (.) W_b) + beta * a

so the sign product is evaluated with packed XNOR words while the
activation magnitudes stay full precision.  alpha and beta are recomputed
from the latent weights every forward pass and receive no gradient.
"""

import numpy as np

from .bitcore import bits_to_words, sign_bits, sign_quantize, words_to_bits
from .errors import DimensionError, InvalidInputError

_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


def compute_scalars(latent_w):
    """Derive (alpha, beta) from a latent channel-weight vector.

    beta is the mean; alpha the unnormalized L2 deviation
    sqrt(sum (w_m - beta)^2).
    """
    w = np.asarray(latent_w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DimensionError("latent weights must be a nonempty 1-D vector")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("latent weights must be finite")
    beta = float(np.mean(w))
    alpha = float(np.sqrt(np.sum(np.square(w - beta))))
    return alpha, beta


class DBConvParams:
    """Latent channel weights plus the per-forward derived quantities."""

    def __init__(self, latent_w):
        latent_w = np.asarray(latent_w, dtype=np.float64)
        if latent_w.ndim != 1 or latent_w.size == 0:
            raise DimensionError("latent weights must be a nonempty 1-D vector")
        self.latent_w = latent_w

    @property
    def channels(self):
        return self.latent_w.shape[0]

    def derive(self):
        """(W_b packed, alpha, beta), all recomputed from latent_w."""
        alpha, beta = compute_scalars(self.latent_w)
        return sign_quantize(self.latent_w), alpha, beta


def binary_sign_product(a, w_pm1, dtype=np.float64):
    """sign(a) * w per channel, evaluated with packed XNOR words.

    a : [..., c, h, w] real; w_pm1 : [c] of +-1.  Returns +-1 values of
    a's shape.  Channel rows are packed, XNORed against an all-0/all-1
    weight word, and unpacked.
    """
    a = np.asarray(a)
    c, h, w = a.shape[-3:]
    if w_pm1.shape != (c,):
        raise DimensionError(f"weight vector {w_pm1.shape} != channels {c}")
    bits = sign_bits(a).reshape(-1, h * w)
    words = bits_to_words(bits)
    wmask = np.where(np.asarray(w_pm1) > 0, _ALL_ONES, np.uint64(0))
    rows = bits.shape[0]
    wcol = np.tile(wmask, rows // c)[:, None]
    xnor = ~(words ^ wcol)
    out_bits = words_to_bits(xnor, h * w)
    return (out_bits.astype(dtype) * 2 - 1).reshape(a.shape)


def db_conv(a, p):
    """Dot binary convolution of full-precision activations.

    a : [c, h, w] (or [..., c, h, w]); p : DBConvParams with c channels.
    Returns alpha * |a| * Y_b + beta * a where Y_b is the packed sign
    product of sign(a) with W_b.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 3:
        raise DimensionError("activations must be at least [c, h, w]")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("activations must be finite")
    if a.shape[-3] != p.channels:
        raise DimensionError(
            f"activation channels {a.shape[-3]} != weight channels {p.channels}"
        )
    w_b, alpha, beta = p.derive()
    from .bitcore import unpack_bits

    y_b = binary_sign_product(a, unpack_bits(w_b, dtype=np.int8))
    return alpha * np.abs(a) * y_b + beta * a


def db_conv_direct_oracle(a, w):
    """Dense reference: per-channel multiply a[m] * w[m], no binary path."""
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if a.ndim < 3:
        raise DimensionError("activations must be at least [c, h, w]")
    if w.ndim != 1 or w.shape[0] != a.shape[-3]:
        raise DimensionError(
            f"weight vector {w.shape} does not match channels {a.shape[-3]}"
        )
    return a * w[:, None, None]


def param_bits(kind, n=None, c=None, k=None):
    """Parameter storage in bits for one convolution unit.

    adabin_conv: 64*c scaling bits plus an n*c*k*k binary kernel.
    db_conv: two float scalars (64 bits) plus c binary channel weights;
    n and k are ignored.
    """
    if kind == "db_conv":
        if c is None or c < 1:
            raise InvalidInputError(f"channel count must be positive, got {c}")
        return 64 + c
    if kind == "adabin_conv":
        for name, v in (("n", n), ("c", c), ("k", k)):
            if v is None or v < 1:
                raise InvalidInputError(f"{name} must be positive, got {v}")
        return 64 * c + n * c * k * k
    raise InvalidInputError(f"unknown convolution kind {kind!r}")
