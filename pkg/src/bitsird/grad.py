"""Straight-through estimation for the sign nonlinearity.

Forward passes keep the exact sign quantizer; backward passes substitute
the derivative of a smooth surrogate.  The dynamic softsign surrogate
kx / (1 + |kx|) carries a trainable sharpness k per sign site, so its own
gradient (through the surrogate term) is also provided here.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .bitcore import sign_pm1
from .errors import DimensionError, InvalidInputError, InvalidParameterError

SURROGATES = ("clip", "quad", "scaled_tanh", "dysoftsign")


@dataclass
class SteConfig:
    """One sign site's gradient-surrogate configuration.

    k is stored as a 0-d float array so an optimizer can update it in
    place; it is trainable only for the dysoftsign surrogate and must stay
    positive (the trainer clamps it at 1e-6 after each step).

    smooth_test_mode replaces the sign forward by the surrogate itself so
    compositions become finite-difference checkable.  Test-only: never used
    for training or inference.
    """

    surrogate: str = "dysoftsign"
    k: np.ndarray = field(default_factory=lambda: np.asarray(0.001))
    smooth_test_mode: bool = False

    def __post_init__(self):
        if self.surrogate not in SURROGATES:
            raise InvalidParameterError(f"unknown surrogate {self.surrogate!r}")
        self.k = np.asarray(self.k, dtype=np.float64)
        if self.k.ndim != 0:
            raise InvalidParameterError("k must be a scalar")
        if float(self.k) <= 0:
            raise InvalidParameterError("k must be > 0")

    @property
    def k_value(self):
        return float(self.k)


def _check_k(k):
    k = float(k)
    if k <= 0:
        raise InvalidParameterError(f"k must be > 0, got {k}")
    return k


def dysoftsign(x, k):
    """kx / (1 + |kx|); odd in x, range (-1, 1)."""
    k = _check_k(k)
    kx = k * np.asarray(x)
    return kx / (1.0 + np.abs(kx))


def dysoftsign_grad(x, k):
    """d/dx of dysoftsign: k / (1 + |kx|)^2 (two-sided, including x = 0)."""
    k = _check_k(k)
    kx = k * np.asarray(x)
    return k / np.square(1.0 + np.abs(kx))


def dysoftsign_k_grad(x, k):
    """d/dk of dysoftsign: x / (1 + |kx|)^2."""
    k = _check_k(k)
    x = np.asarray(x)
    return x / np.square(1.0 + np.abs(k * x))


def clip_value(x):
    return np.clip(np.asarray(x), -1.0, 1.0)


def clip_grad(x):
    x = np.asarray(x)
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    return (np.abs(x) <= 1.0).astype(dt)


def quad_value(x):
    """Piecewise-quadratic sign approximation: -1 / 2x+x^2 / 2x-x^2 / 1."""
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    return np.select(
        [x < -1.0, x < 0.0, x <= 1.0],
        [-1.0, 2.0 * x + x * x, 2.0 * x - x * x],
        default=1.0,
    )


def quad_grad(x):
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    inner = np.where(x < 0.0, 2.0 + 2.0 * x, 2.0 - 2.0 * x)
    return np.where(np.abs(x) > 1.0, 0.0, inner)


def scaled_tanh(x, k):
    k = _check_k(k)
    return np.tanh(k * np.asarray(x))


def scaled_tanh_grad(x, k):
    k = _check_k(k)
    t = np.tanh(k * np.asarray(x))
    return k * (1.0 - t * t)


def surrogate_value(x, cfg):
    """Evaluate the configured surrogate elementwise."""
    if cfg.surrogate == "clip":
        return clip_value(x)
    if cfg.surrogate == "quad":
        return quad_value(x)
    if cfg.surrogate == "scaled_tanh":
        return scaled_tanh(x, cfg.k_value)
    return dysoftsign(x, cfg.k_value)


def surrogate_grad(x, cfg):
    """d/dx of the configured surrogate elementwise."""
    if cfg.surrogate == "clip":
        return clip_grad(x)
    if cfg.surrogate == "quad":
        return quad_grad(x)
    if cfg.surrogate == "scaled_tanh":
        return scaled_tanh_grad(x, cfg.k_value)
    return dysoftsign_grad(x, cfg.k_value)


def ste_forward(x, cfg):
    """Sign-site forward: exact sign normally, the surrogate in smooth mode."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("ste_forward requires finite input")
    if cfg.smooth_test_mode:
        return surrogate_value(x, cfg)
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    return sign_pm1(x, dtype=dt)


def ste_backward(x, upstream, cfg):
    """Backward of a sign site: (upstream * surrogate', sum of k-gradient).

    grad_k is nonzero only for the dysoftsign surrogate (the only one whose
    k is trainable); it flows through the surrogate term regardless of
    whether the forward ran in normal or smooth mode.
    """
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {upstream.shape}")
    if cfg.surrogate == "dysoftsign":
        # share the (1 + |kx|)^2 denominator between the x and k gradients:
        # grad_x = up * k / d, grad_k = sum(up * x / d) = dot(grad_x, x) / k
        k = cfg.k_value
        denom = 1.0 + k * np.abs(x)
        np.multiply(denom, denom, out=denom)
        grad_x = upstream / denom
        grad_x *= k
        grad_k = float(
            np.dot(grad_x.ravel(), np.asarray(x, dtype=grad_x.dtype).ravel()) / k
        )
        return grad_x, grad_k
    return upstream * surrogate_grad(x, cfg), 0.0


def approx_error_sq(k, range_mult=1e4):
    """Squared sign-approximation error of dysoftsign, by quadrature.

    Integrates (sign(x) - dysoftsign(x, k))^2 over [-R, R] with
    R = range_mult / k; scales as 2/k.
    """
    k = _check_k(k)
    r = range_mult / k
    breaks = [10.0**j / k for j in range(-3, 1 + math.ceil(math.log10(range_mult)))]
    breaks = sorted(b for b in breaks if 0.0 < b < r)

    def integrand(x):
        fx = k * x / (1.0 + abs(k * x))
        return (1.0 - fx) ** 2

    # Odd symmetry of the surrogate makes the two half-lines equal.
    val, _ = quad(integrand, 0.0, r, points=breaks, limit=400)
    return 2.0 * val
