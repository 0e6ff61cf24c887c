"""Binary Block layers with hand-written forward and backward passes.

Every layer caches what its backward needs when forward(train=True) is
called, accumulates parameter gradients into Param.grad, and returns the
gradient with respect to its input.  Sign sites go through grad.SteConfig:
exact sign forward in normal mode, the surrogate itself in smooth test
mode (which makes every composition finite-difference checkable).
"""

from collections import namedtuple

import numpy as np

from .binconv import (
    conv2d_backward_input,
    conv2d_backward_weight,
    conv2d_float,
    packed_conv2d_bits,
)
from .bitcore import sign_bits, sign_pm1
from .dbconv import binary_sign_product, compute_scalars
from .errors import DimensionError
from .grad import SteConfig, ste_backward, ste_forward

LayerCost = namedtuple("LayerCost", "params_f params_b flops_f bops_b")


def _add_costs(*costs):
    return LayerCost(*[sum(c[i] for c in costs) for i in range(4)])


class Param:
    """A trainable tensor: value, gradient buffer, and optimizer flags."""

    __slots__ = ("value", "grad", "decay", "clamp_min")

    def __init__(self, value, decay=True, clamp_min=None):
        self.value = np.asarray(value)
        self.grad = np.zeros(self.value.shape, dtype=np.float64)
        self.decay = decay
        self.clamp_min = clamp_min

    def zero_grad(self):
        self.grad[...] = 0.0


def _cview(v):
    """[c] parameter vector broadcastable against [..., c, h, w]."""
    return v.reshape(v.shape[0], 1, 1)


def _csum(g):
    """Sum over every axis except the channel axis (-3)."""
    axes = tuple(i for i in range(g.ndim) if i != g.ndim - 3)
    return g.sum(axis=axes)


def rprrelu(y, a, b, c):
    """Per-channel shifted leaky rectifier.

    y - a + b where y > a, else c * (y - a) + b; continuous at y = a.
    """
    y = np.asarray(y)
    a, b, c = (_cview(np.asarray(p)) for p in (a, b, c))
    return np.where(y > a, y - a + b, c * (y - a) + b)


def maxout(y, lam1, lam2):
    """Per-channel max of two learnable linear maps."""
    y = np.asarray(y)
    l1, l2 = _cview(np.asarray(lam1)), _cview(np.asarray(lam2))
    return np.maximum(l1 * y, l2 * y)


def redistribute(x, alpha, beta):
    """Per-channel affine map alpha * x + beta."""
    x = np.asarray(x)
    return _cview(np.asarray(alpha)) * x + _cview(np.asarray(beta))


class SteSite:
    """One sign site: its surrogate config plus the trainable sharpness k.

    The k parameter is stored as a 0-d float64 array shared with the
    SteConfig, so in-place optimizer updates are visible to the config.
    k is registered as trainable only for the dysoftsign surrogate.
    """

    def __init__(self, surrogate, k_init):
        self.k = Param(np.asarray(float(k_init), dtype=np.float64),
                       decay=False, clamp_min=1e-6)
        self.cfg = SteConfig(surrogate, k=self.k.value)

    @property
    def trainable(self):
        return self.cfg.surrogate == "dysoftsign"

    def forward(self, x):
        return ste_forward(x, self.cfg)

    def backward(self, x, upstream):
        gx, gk = ste_backward(x, upstream, self.cfg)
        if self.trainable:
            self.k.grad += gk
        return gx


class Layer:
    """Base class: parameter registry, sign-site registry, cost model."""

    def named_params(self):
        return []

    def ste_sites(self):
        return []

    def set_smooth_mode(self, enabled):
        for _, site in self.ste_sites():
            site.cfg.smooth_test_mode = bool(enabled)

    def cost(self, h, w):
        return LayerCost(0, 0, 0, 0)

    def zero_grad(self):
        for _, p in self.named_params():
            p.zero_grad()


class RprRelu(Layer):
    def __init__(self, c, dtype=np.float32):
        self.a = Param(np.zeros(c, dtype=dtype))
        self.b = Param(np.zeros(c, dtype=dtype))
        self.c = Param(np.full(c, 0.25, dtype=dtype))

    def named_params(self):
        return [("a", self.a), ("b", self.b), ("c", self.c)]

    def cost(self, h, w):
        return LayerCost(3 * self.a.value.shape[0], 0, 0, 0)

    def forward(self, x, train=False):
        if train:
            self._x = x
        return rprrelu(x, self.a.value, self.b.value, self.c.value)

    def backward(self, g):
        x = self._x
        upper = x > _cview(self.a.value)
        gx = g * np.where(upper, 1.0, _cview(self.c.value))
        self.a.grad += -_csum(gx)
        self.b.grad += _csum(g)
        self.c.grad += _csum(np.where(upper, 0.0, g * (x - _cview(self.a.value))))
        return gx


class Redistribution(Layer):
    def __init__(self, c, dtype=np.float32):
        self.alpha = Param(np.ones(c, dtype=dtype))
        self.beta = Param(np.zeros(c, dtype=dtype))

    def named_params(self):
        return [("alpha", self.alpha), ("beta", self.beta)]

    def cost(self, h, w):
        return LayerCost(2 * self.alpha.value.shape[0], 0, 0, 0)

    def forward(self, x, train=False):
        if train:
            self._x = x
        return redistribute(x, self.alpha.value, self.beta.value)

    def backward(self, g):
        self.alpha.grad += _csum(g * self._x)
        self.beta.grad += _csum(g)
        return g * _cview(self.alpha.value)


class Maxout(Layer):
    def __init__(self, c, dtype=np.float32):
        self.lam1 = Param(np.ones(c, dtype=dtype))
        self.lam2 = Param(np.full(c, 0.25, dtype=dtype))

    def named_params(self):
        return [("l1", self.lam1), ("l2", self.lam2)]

    def cost(self, h, w):
        return LayerCost(2 * self.lam1.value.shape[0], 0, 0, 0)

    def forward(self, x, train=False):
        l1, l2 = _cview(self.lam1.value), _cview(self.lam2.value)
        first = l1 * x >= l2 * x
        if train:
            self._x = x
            self._first = first
        return np.where(first, l1 * x, l2 * x)

    def backward(self, g):
        x, first = self._x, self._first
        l1, l2 = _cview(self.lam1.value), _cview(self.lam2.value)
        gx_val = g * x
        on_first = _csum(np.where(first, gx_val, 0.0))
        self.lam1.grad += on_first
        self.lam2.grad += _csum(gx_val) - on_first
        return g * np.where(first, l1, l2)


class DbConvUnit(Layer):
    """1x1 depthwise dot binary convolution (no activation, no residual).

    Forward derives (alpha, beta) from the latent weights, evaluates the
    +-1 sign product with packed XNOR words, and combines
    alpha * |x| * Y_b + beta * x.  alpha/beta receive no gradient; the
    latent weights are reached through the weight sign site, and x through
    the |x| path (d|x|/dx = sign(x), +1 at 0), the activation sign site,
    and the beta * x term.

    frozen_scalars pins (alpha, beta) instead of re-deriving them; this is
    a test hook that makes the layer's forward exactly the function the
    backward differentiates, for finite-difference checks.
    """

    def __init__(self, c, surrogate="dysoftsign", k_init=0.001,
                 dtype=np.float32, rng=None, init="identity"):
        if rng is None:
            latent = np.ones(c) if init == "identity" else np.zeros(c)
        elif init == "identity":
            # beta ~ 1, alpha ~ 0.05: close to a pass-through map, used
            # where the unit carries the whole signal (DS/US/FU)
            latent = 1.0 + rng.normal(size=c) * (0.05 / np.sqrt(c))
        else:
            # beta ~ 0, alpha ~ 0.05: a small perturbation, used inside
            # residual blocks where the input is added back afterwards
            latent = rng.normal(size=c) * (0.05 / np.sqrt(c))
        self.w = Param(latent.astype(dtype))
        self.site_w = SteSite(surrogate, k_init)
        self.site_a = SteSite(surrogate, k_init)
        self.frozen_scalars = None

    @property
    def channels(self):
        return self.w.value.shape[0]

    def named_params(self):
        out = [("w", self.w)]
        if self.site_w.trainable:
            out += [("k_w", self.site_w.k), ("k_a", self.site_a.k)]
        return out

    def ste_sites(self):
        return [("w", self.site_w), ("a", self.site_a)]

    def cost(self, h, w):
        c = self.channels
        return LayerCost(2, c, 0, 2 * c * h * w)

    def scalars(self):
        if self.frozen_scalars is not None:
            return self.frozen_scalars
        return compute_scalars(self.w.value)

    def forward(self, x, train=False):
        if x.shape[-3] != self.channels:
            raise DimensionError(
                f"expected {self.channels} channels, got {x.shape[-3]}"
            )
        alpha, beta = self.scalars()
        smooth = self.site_a.cfg.smooth_test_mode
        w_vals = self.site_w.forward(self.w.value)
        if smooth:
            s_a = self.site_a.forward(x)
            y_b = s_a * _cview(w_vals)
        else:
            s_a = None
            y_b = binary_sign_product(x, w_vals.astype(np.int8), dtype=x.dtype)
        out = alpha * np.abs(x) * y_b + beta * x
        if train:
            self._cache = (x, s_a, w_vals, alpha, beta, smooth)
        return out.astype(x.dtype, copy=False)

    def backward(self, g):
        x, s_a, w_vals, alpha, beta, smooth = self._cache
        g = np.asarray(g)
        wv = _cview(np.asarray(w_vals, dtype=g.dtype))
        if smooth:
            u = np.abs(x)
            # |x| path + sign site + beta term
            gx = g * (alpha * wv * s_a) * sign_pm1(x, dtype=g.dtype)
            gx = gx + self.site_a.backward(x, g * (alpha * u * wv))
            gx += beta * g
            g_wvals = _csum(g * alpha * u * s_a)
        else:
            # with s_a = sign(x): sign(x)*s_a = 1 and |x|*s_a = x, so the
            # |x|-path term collapses and the weight sum contracts with x
            t = g * (alpha * wv)
            gx = t + self.site_a.backward(x, t * np.abs(x)) + beta * g
            g_wvals = alpha * _csum(g * x)
        self.w.grad += self.site_w.backward(self.w.value, g_wvals)
        return gx


class BinaryConvLayer(Layer):
    """Shape-preserving 3x3 binary convolution with residual input add.

    sign(x) and sign(latent weights) feed the packed XNOR/popcount kernel;
    the window sums pass through RPRReLU and the full-precision input is
    added back.
    """

    KERNEL = 3

    def __init__(self, c, surrogate="dysoftsign", k_init=0.001,
                 dtype=np.float32, rng=None):
        k = self.KERNEL
        bound = 1.0 / np.sqrt(c * k * k)
        if rng is None:
            latent = np.zeros((c, c, k, k))
        else:
            latent = rng.uniform(-bound, bound, size=(c, c, k, k))
            # balance each filter's sign pattern so responses on
            # constant-sign regions start near zero
            latent -= np.median(latent.reshape(c, -1), axis=1)[:, None, None, None]
        self.w = Param(latent.astype(dtype))
        self.site_w = SteSite(surrogate, k_init)
        self.site_a = SteSite(surrogate, k_init)
        self.rpr = RprRelu(c, dtype)
        self.c = c

    def named_params(self):
        out = [("w", self.w)]
        if self.site_w.trainable:
            out += [("k_w", self.site_w.k), ("k_a", self.site_a.k)]
        out += [("rpr." + n, p) for n, p in self.rpr.named_params()]
        return out

    def ste_sites(self):
        return [("w", self.site_w), ("a", self.site_a)]

    def cost(self, h, w):
        c, k = self.c, self.KERNEL
        conv = LayerCost(0, c * c * k * k, 0, 2 * (c * k * k) * c * h * w)
        return _add_costs(conv, self.rpr.cost(h, w))

    def forward(self, x, train=False):
        if x.shape[-3] != self.c:
            raise DimensionError(f"expected {self.c} channels, got {x.shape[-3]}")
        x4 = x if x.ndim == 4 else x[None]
        smooth = self.site_a.cfg.smooth_test_mode
        if smooth:
            a_vals = self.site_a.forward(x4)
            w_vals = self.site_w.forward(self.w.value)
            y = conv2d_float(a_vals, w_vals, 1, 1)
        else:
            a_vals = sign_pm1(x4, dtype=x4.dtype)
            w_vals = sign_pm1(self.w.value, dtype=self.w.value.dtype)
            y = packed_conv2d_bits(
                sign_bits(x4), sign_bits(self.w.value), 1, 1
            ).astype(x4.dtype)
        if train:
            self._cache = (x, a_vals, w_vals)
        y = self.rpr.forward(y, train)
        out = y.astype(x.dtype, copy=False) + x4
        return out if x.ndim == 4 else out[0]

    def backward(self, g):
        x, a_vals, w_vals = self._cache
        g4 = np.asarray(g if g.ndim == 4 else g[None])
        gc = self.rpr.backward(g4)
        gx = self.site_a.backward(
            x if x.ndim == 4 else x[None],
            conv2d_backward_input(gc, w_vals, padding=1),
        )
        gw = conv2d_backward_weight(a_vals, gc, self.KERNEL, padding=1)
        self.w.grad += self.site_w.backward(self.w.value, gw)
        gx = gx + g4
        return gx if g.ndim == 4 else gx[0]


class DBConvLayer(Layer):
    """maxout(db_conv(x)) + x, the precision-preserving half of the block."""

    def __init__(self, c, surrogate="dysoftsign", k_init=0.001,
                 dtype=np.float32, rng=None):
        self.db = DbConvUnit(c, surrogate, k_init, dtype, rng, init="residual")
        self.act = Maxout(c, dtype)

    def named_params(self):
        return [("db." + n, p) for n, p in self.db.named_params()] + [
            ("max." + n, p) for n, p in self.act.named_params()
        ]

    def ste_sites(self):
        return [("db." + n, s) for n, s in self.db.ste_sites()]

    def cost(self, h, w):
        return _add_costs(self.db.cost(h, w), self.act.cost(h, w))

    def forward(self, x, train=False):
        y = self.db.forward(x, train)
        y = self.act.forward(y, train)
        return y + x

    def backward(self, g):
        return self.db.backward(self.act.backward(g)) + g


class BinaryBlock(Layer):
    """Binary Convolution Layer -> ReDistribution -> DB Conv Layer.

    Pass-through configuration (used by the residual-guarantee check):
    with rpr.a very large, rpr.b = rpr.c = 0, redistribution at (1, 0) and
    an all-zero db latent vector, the block is exactly the identity.
    """

    def __init__(self, c, surrogate="dysoftsign", k_init=0.001,
                 dtype=np.float32, rng=None):
        self.bconv = BinaryConvLayer(c, surrogate, k_init, dtype, rng)
        self.redist = Redistribution(c, dtype)
        self.dbl = DBConvLayer(c, surrogate, k_init, dtype, rng)

    def named_params(self):
        parts = [("bconv", self.bconv), ("redist", self.redist), ("dbl", self.dbl)]
        return [(f"{pre}.{n}", p) for pre, l in parts for n, p in l.named_params()]

    def ste_sites(self):
        return [("bconv." + n, s) for n, s in self.bconv.ste_sites()] + [
            ("dbl." + n, s) for n, s in self.dbl.ste_sites()
        ]

    def cost(self, h, w):
        return _add_costs(
            self.bconv.cost(h, w), self.redist.cost(h, w), self.dbl.cost(h, w)
        )

    def forward(self, x, train=False):
        x = self.bconv.forward(x, train)
        x = self.redist.forward(x, train)
        return self.dbl.forward(x, train)

    def backward(self, g):
        g = self.dbl.backward(g)
        g = self.redist.backward(g)
        return self.bconv.backward(g)


def configure_passthrough(block):
    """Set the documented pass-through parameters on a BinaryBlock."""
    block.bconv.rpr.a.value[...] = 1e9
    block.bconv.rpr.b.value[...] = 0.0
    block.bconv.rpr.c.value[...] = 0.0
    block.redist.alpha.value[...] = 1.0
    block.redist.beta.value[...] = 0.0
    block.dbl.db.w.value[...] = 0.0


class DownSample(Layer):
    """2x2 max pool, channel duplication, then a dot binary convolution.

    Halves spatial extents and doubles channels; channel changes are
    parameter-free so the only weights are the db unit's.
    """

    def __init__(self, c_in, surrogate="dysoftsign", k_init=0.001,
                 dtype=np.float32, rng=None):
        self.c_in = c_in
        self.db = DbConvUnit(2 * c_in, surrogate, k_init, dtype, rng)

    def named_params(self):
        return [("db." + n, p) for n, p in self.db.named_params()]

    def ste_sites(self):
        return [("db." + n, s) for n, s in self.db.ste_sites()]

    def cost(self, h, w):
        return self.db.cost(h // 2, w // 2)

    def forward(self, x, train=False):
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise DimensionError(f"downsample requires even extents, got {h}x{w}")
        x4 = x if x.ndim == 4 else x[None]
        n, c = x4.shape[:2]
        cells = x4.reshape(n, c, h // 2, 2, w // 2, 2)
        cells = cells.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = cells.argmax(axis=-1)
        pooled = np.take_along_axis(cells, idx[..., None], axis=-1)[..., 0]
        dup = np.repeat(pooled, 2, axis=1)
        if train:
            self._cache = (x.ndim, x4.shape, idx)
        out = self.db.forward(dup, train)
        return out if x.ndim == 4 else out[0]

    def backward(self, g):
        ndim, xshape, idx = self._cache
        g4 = g if g.ndim == 4 else g[None]
        gd = self.db.backward(g4)
        gp = gd[:, 0::2] + gd[:, 1::2]
        n, c, h, w = xshape
        cells = np.zeros((n, c, h // 2, w // 2, 4), dtype=gp.dtype)
        np.put_along_axis(cells, idx[..., None], gp[..., None], axis=-1)
        gx = cells.reshape(n, c, h // 2, w // 2, 2, 2)
        gx = gx.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return gx if ndim == 4 else gx[0]


class UpSample(Layer):
    """Nearest 2x upsample, dot binary convolution, then pair-averaged
    channel halving.  Doubles spatial extents and halves channels."""

    def __init__(self, c_in, surrogate="dysoftsign", k_init=0.001,
                 dtype=np.float32, rng=None):
        if c_in % 2:
            raise DimensionError(f"upsample requires even channels, got {c_in}")
        self.c_in = c_in
        self.db = DbConvUnit(c_in, surrogate, k_init, dtype, rng)

    def named_params(self):
        return [("db." + n, p) for n, p in self.db.named_params()]

    def ste_sites(self):
        return [("db." + n, s) for n, s in self.db.ste_sites()]

    def cost(self, h, w):
        return self.db.cost(2 * h, 2 * w)

    def forward(self, x, train=False):
        x4 = x if x.ndim == 4 else x[None]
        up = np.repeat(np.repeat(x4, 2, axis=-2), 2, axis=-1)
        y = self.db.forward(up, train)
        if train:
            self._ndim = x.ndim
        out = 0.5 * (y[:, 0::2] + y[:, 1::2])
        out = out.astype(x.dtype, copy=False)
        return out if x.ndim == 4 else out[0]

    def backward(self, g):
        g4 = g if g.ndim == 4 else g[None]
        gy = np.repeat(0.5 * np.asarray(g4), 2, axis=1)
        gu = self.db.backward(gy)
        gx = (
            gu[..., 0::2, 0::2]
            + gu[..., 0::2, 1::2]
            + gu[..., 1::2, 0::2]
            + gu[..., 1::2, 1::2]
        )
        return gx if self._ndim == 4 else gx[0]


class Fuse(Layer):
    """Elementwise add of skip and decoder features, then a db unit."""

    def __init__(self, c, surrogate="dysoftsign", k_init=0.001,
                 dtype=np.float32, rng=None):
        self.db = DbConvUnit(c, surrogate, k_init, dtype, rng)

    def named_params(self):
        return [("db." + n, p) for n, p in self.db.named_params()]

    def ste_sites(self):
        return [("db." + n, s) for n, s in self.db.ste_sites()]

    def cost(self, h, w):
        return self.db.cost(h, w)

    def forward(self, skip, up, train=False):
        if skip.shape != up.shape:
            raise DimensionError(f"fuse shapes differ: {skip.shape} vs {up.shape}")
        return self.db.forward(skip + up, train)

    def backward(self, g):
        gs = self.db.backward(g)
        return gs, gs


class FloatConv(Layer):
    """Full-precision zero-padded convolution (stem and prediction head).

    bias_init adds a per-output-channel bias; the prediction head uses it
    to start its logits at the background prior.
    """

    def __init__(self, c_in, c_out, kernel, dtype=np.float32, rng=None,
                 init="he", bias_init=None):
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.padding = kernel // 2
        if rng is None or init == "zero":
            w = np.zeros((c_out, c_in, kernel, kernel))
        else:
            std = np.sqrt(2.0 / (c_in * kernel * kernel))
            w = rng.normal(0.0, std, size=(c_out, c_in, kernel, kernel))
        self.w = Param(w.astype(dtype))
        self.b = None
        if bias_init is not None:
            self.b = Param(np.full(c_out, bias_init, dtype=dtype), decay=False)

    def named_params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def cost(self, h, w):
        k = self.kernel
        macs = self.c_in * k * k * self.c_out * h * w
        n_params = self.c_out * self.c_in * k * k
        if self.b is not None:
            n_params += self.c_out
        return LayerCost(n_params, 0, 2 * macs, 0)

    def forward(self, x, train=False):
        x4 = x if x.ndim == 4 else x[None]
        if train:
            self._cache = (x.ndim, x4)
        y = conv2d_float(x4, self.w.value, 1, self.padding).astype(
            x.dtype, copy=False
        )
        if self.b is not None:
            y += _cview(self.b.value)
        return y if x.ndim == 4 else y[0]

    def backward(self, g):
        ndim, x4 = self._cache
        g4 = np.asarray(g if g.ndim == 4 else g[None])
        if self.b is not None:
            self.b.grad += _csum(g4)
        self.w.grad += conv2d_backward_weight(x4, g4, self.kernel, self.padding)
        gx = conv2d_backward_input(g4, self.w.value, self.padding)
        return gx if ndim == 4 else gx[0]
