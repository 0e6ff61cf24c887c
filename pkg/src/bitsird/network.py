"""3-stage U-shaped binary segmentation network and its cost accounting.

Layout: full-precision 3x3 stem, two encoder stages of binary blocks with
down-sampling between them, a bottleneck stage, a mirrored decoder with
skip fusions, and a full-precision 1x1 head emitting a single logit map.
Channels double at every down-sample and halve at every up-sample.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError
from .layers import (
    BinaryBlock,
    DownSample,
    FloatConv,
    Fuse,
    UpSample,
)

FLOAT_BITS = 32
BINARY_OPS_PER_FLOP = 64


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    stage_channels : channel widths of the three stages (full, /2 and /4
    resolution); each stage must double the previous one's width.
    blocks : binary blocks per stage (encoder side; the decoder mirrors
    the first two entries, the last entry is the bottleneck).
    """

    stage_channels: tuple = (16, 32, 64)
    blocks: tuple = (1, 2, 5)
    surrogate: str = "dysoftsign"
    k_init: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if len(self.stage_channels) != 3 or len(self.blocks) != 3:
            raise ConfigError("exactly 3 stages are supported")
        c0, c1, c2 = self.stage_channels
        if c1 != 2 * c0 or c2 != 2 * c1:
            raise ConfigError(
                f"stage channels must double per stage, got {self.stage_channels}"
            )
        if any(b < 1 for b in self.blocks):
            raise ConfigError("every stage needs at least one block")
        if self.k_init <= 0:
            raise ConfigError("k_init must be > 0")


@dataclass
class AccountingRow:
    name: str
    params_f: int
    params_b: int
    flops_f: int
    bops_b: int


@dataclass
class AccountingReport:
    """Per-layer and total parameter / operation accounting.

    Conventions (stated in every rendering): dense convolutions count
    2 ops per multiply-accumulate into flops_f; binary convolutions count
    2 ops per XNOR-accumulate into bops_b; elementwise activations,
    affine maps and residual adds are not counted.  Binary parameters
    weigh 1/32 of a float parameter; binary ops 1/64 of a float op.
    """

    input_hw: tuple
    rows: list = field(default_factory=list)
    word_bits: int = 64

    def _total(self, attr):
        return sum(getattr(r, attr) for r in self.rows)

    @property
    def params_f(self):
        return self._total("params_f")

    @property
    def params_b(self):
        return self._total("params_b")

    @property
    def flops_f(self):
        return self._total("flops_f")

    @property
    def bops_b(self):
        return self._total("bops_b")

    @property
    def params_total(self):
        return self.params_f + self.params_b / FLOAT_BITS

    @property
    def ops_total(self):
        return self.flops_f + self.bops_b / BINARY_OPS_PER_FLOP

    @property
    def binary_weight_bytes(self):
        return (self.params_b + 7) // 8

    @property
    def float_equiv_weight_bytes(self):
        return self.params_b * 4

    def header_lines(self):
        return [
            f"accounting at input {self.input_hw[0]}x{self.input_hw[1]} "
            f"(word size {self.word_bits} bits)",
            "conventions: flops_f = 2 per multiply-accumulate; "
            "bops_b = 2 per xnor-accumulate; elementwise ops not counted",
            "totals: Params = params_f + params_b/32 (float-parameter "
            "equivalents); OPs = flops_f + bops_b/64",
        ]

    def to_kv_lines(self):
        lines = []
        for r in self.rows:
            lines.append(
                f"layer.{r.name} params_f={r.params_f} params_b={r.params_b} "
                f"flops_f={r.flops_f} bops_b={r.bops_b}"
            )
        lines.append(f"total.params_f={self.params_f}")
        lines.append(f"total.params_b={self.params_b}")
        lines.append(f"total.flops_f={self.flops_f}")
        lines.append(f"total.bops_b={self.bops_b}")
        lines.append(f"total.params={self.params_total:.2f}")
        lines.append(f"total.ops={self.ops_total:.2f}")
        lines.append(f"total.params_k={self.params_total / 1e3:.3f}")
        lines.append(f"total.ops_g={self.ops_total / 1e9:.4f}")
        lines.append(f"binary.weight_bytes={self.binary_weight_bytes}")
        lines.append(f"binary.float_equiv_bytes={self.float_equiv_weight_bytes}")
        return lines

    def to_text(self):
        out = ["# " + line for line in self.header_lines()]
        head = f"{'layer':<16}{'params_f':>10}{'params_b':>10}{'flops_f':>14}{'bops_b':>14}"
        out.append(head)
        out.append("-" * len(head))
        for r in self.rows:
            out.append(
                f"{r.name:<16}{r.params_f:>10}{r.params_b:>10}"
                f"{r.flops_f:>14}{r.bops_b:>14}"
            )
        out.append("-" * len(head))
        out.append(
            f"{'total':<16}{self.params_f:>10}{self.params_b:>10}"
            f"{self.flops_f:>14}{self.bops_b:>14}"
        )
        out.append(
            f"Params = {self.params_total / 1e3:.2f} K    "
            f"OPs = {self.ops_total / 1e9:.4f} G"
        )
        out.append(
            f"binary weights packed: {self.binary_weight_bytes} bytes "
            f"(vs {self.float_equiv_weight_bytes} bytes at float32)"
        )
        return "\n".join(out)


class Model:
    """Built network: ordered named layers, parameters, and accounting."""

    def __init__(self, cfg=None, seed=0, dtype=np.float32):
        self.cfg = cfg or NetConfig()
        self.dtype = dtype
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        c0, c1, c2 = self.cfg.stage_channels
        b0, b1, b2 = self.cfg.blocks
        sur, ki = self.cfg.surrogate, self.cfg.k_init

        def blocks(c, n):
            return [BinaryBlock(c, sur, ki, dtype, rng) for _ in range(n)]

        self.stem = FloatConv(1, c0, 3, dtype, rng)
        self.enc0 = blocks(c0, b0)
        self.ds0 = DownSample(c0, sur, ki, dtype, rng)
        self.enc1 = blocks(c1, b1)
        self.ds1 = DownSample(c1, sur, ki, dtype, rng)
        self.bott = blocks(c2, b2)
        self.us1 = UpSample(c2, sur, ki, dtype, rng)
        self.fu1 = Fuse(c1, sur, ki, dtype, rng)
        self.dec1 = blocks(c1, b1)
        self.us0 = UpSample(c1, sur, ki, dtype, rng)
        self.fu0 = Fuse(c0, sur, ki, dtype, rng)
        self.dec0 = blocks(c0, b0)
        # zero weights + background-prior bias: logits start flat and low,
        # which keeps the soft-IoU loss out of the all-positive basin
        self.head = FloatConv(c0, 1, 1, dtype, rng, init="zero", bias_init=-4.0)

    def named_layers(self):
        """Ordered (name, layer) pairs, the traversal order of forward."""
        out = [("stem", self.stem)]
        out += [(f"enc0.b{i}", l) for i, l in enumerate(self.enc0)]
        out.append(("ds0", self.ds0))
        out += [(f"enc1.b{i}", l) for i, l in enumerate(self.enc1)]
        out.append(("ds1", self.ds1))
        out += [(f"bott.b{i}", l) for i, l in enumerate(self.bott)]
        out.append(("us1", self.us1))
        out.append(("fu1", self.fu1))
        out += [(f"dec1.b{i}", l) for i, l in enumerate(self.dec1)]
        out.append(("us0", self.us0))
        out.append(("fu0", self.fu0))
        out += [(f"dec0.b{i}", l) for i, l in enumerate(self.dec0)]
        out.append(("head", self.head))
        return out

    def named_params(self):
        return [
            (f"{ln}.{pn}", p)
            for ln, layer in self.named_layers()
            for pn, p in layer.named_params()
        ]

    def ste_sites(self):
        return [
            (f"{ln}.{sn}", s)
            for ln, layer in self.named_layers()
            for sn, s in layer.ste_sites()
        ]

    def k_values(self):
        return {name: float(site.k.value) for name, site in self.ste_sites()}

    def set_smooth_mode(self, enabled):
        for _, layer in self.named_layers():
            layer.set_smooth_mode(enabled)

    def zero_grad(self):
        for _, p in self.named_params():
            p.zero_grad()

    def _check_input(self, x):
        x = np.asarray(x)
        if x.ndim not in (3, 4) or x.shape[-3] != 1:
            raise DimensionError(f"expected [1, h, w] or [N, 1, h, w], got {x.shape}")
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise DimensionError(f"extents must be divisible by 4, got {h}x{w}")
        return x

    def forward(self, x, train=False, check=False):
        """Logit map of the same spatial extents as the input."""
        x = self._check_input(x)
        squeeze = x.ndim == 3
        v = x[None] if squeeze else x
        v = v.astype(self.dtype, copy=False)

        def step(name, out):
            if check and not np.all(np.isfinite(out)):
                raise DivergenceError(f"non-finite output of layer {name}", name)
            return out

        v = step("stem", self.stem.forward(v, train))
        for i, blk in enumerate(self.enc0):
            v = step(f"enc0.b{i}", blk.forward(v, train))
        e0 = v
        v = step("ds0", self.ds0.forward(v, train))
        for i, blk in enumerate(self.enc1):
            v = step(f"enc1.b{i}", blk.forward(v, train))
        e1 = v
        v = step("ds1", self.ds1.forward(v, train))
        for i, blk in enumerate(self.bott):
            v = step(f"bott.b{i}", blk.forward(v, train))
        v = step("us1", self.us1.forward(v, train))
        v = step("fu1", self.fu1.forward(e1, v, train))
        for i, blk in enumerate(self.dec1):
            v = step(f"dec1.b{i}", blk.forward(v, train))
        v = step("us0", self.us0.forward(v, train))
        v = step("fu0", self.fu0.forward(e0, v, train))
        for i, blk in enumerate(self.dec0):
            v = step(f"dec0.b{i}", blk.forward(v, train))
        v = step("head", self.head.forward(v, train))
        return v[0] if squeeze else v

    def backward(self, g):
        """Accumulate parameter gradients for the last forward(train=True)."""
        g = np.asarray(g, dtype=self.dtype)
        squeeze = g.ndim == 3
        g = g[None] if squeeze else g
        g = self.head.backward(g)
        for blk in reversed(self.dec0):
            g = blk.backward(g)
        g_e0, g = self.fu0.backward(g)
        g = self.us0.backward(g)
        for blk in reversed(self.dec1):
            g = blk.backward(g)
        g_e1, g = self.fu1.backward(g)
        g = self.us1.backward(g)
        for blk in reversed(self.bott):
            g = blk.backward(g)
        g = self.ds1.backward(g) + g_e1
        for blk in reversed(self.enc1):
            g = blk.backward(g)
        g = self.ds0.backward(g) + g_e0
        for blk in reversed(self.enc0):
            g = blk.backward(g)
        g = self.stem.backward(g)
        return g[0] if squeeze else g

    def account(self, input_hw):
        """Parameter and operation accounting at the given input extents."""
        h, w = input_hw
        report = AccountingReport(input_hw=(h, w))
        res = {"stem": (h, w), "head": (h, w)}
        for pre, scale in (("enc0", 1), ("ds0", 1), ("dec0", 1), ("fu0", 1),
                           ("enc1", 2), ("ds1", 2), ("dec1", 2), ("fu1", 2),
                           ("bott", 4), ("us1", 4)):
            res[pre] = (h // scale, w // scale)
        res["us0"] = (h // 2, w // 2)
        for name, layer in self.named_layers():
            key = name.split(".")[0]
            lh, lw = res[key]
            c = layer.cost(lh, lw)
            report.rows.append(AccountingRow(name, *c))
        return report

    def state_arrays(self):
        """Ordered (name, float array) pairs for checkpointing."""
        return [(n, p.value) for n, p in self.named_params()]

    def binary_export_records(self):
        """Deployment snapshot: latent conv weights replaced by their packed
        sign patterns plus the derived per-layer scalars; sign-site k values
        are dropped (training-only)."""
        from .bitcore import sign_quantize
        from .dbconv import compute_scalars
        from .layers import BinaryConvLayer, DbConvUnit, Layer

        records = []

        def walk(prefix, layer):
            if isinstance(layer, BinaryConvLayer):
                records.append((prefix + ".w_b", sign_quantize(layer.w.value)))
                walk(prefix + ".rpr", layer.rpr)
                return
            if isinstance(layer, DbConvUnit):
                alpha, beta = compute_scalars(layer.w.value)
                records.append((prefix + ".w_b", sign_quantize(layer.w.value)))
                records.append((prefix + ".alpha", np.float32(alpha)))
                records.append((prefix + ".beta", np.float32(beta)))
                return
            subs = [(n, l) for n, l in vars(layer).items() if isinstance(l, Layer)]
            if subs:
                for n, sub in subs:
                    walk(f"{prefix}.{n}", sub)
            for pn, p in layer.named_params():
                if "." not in pn and not pn.startswith("k_"):
                    records.append((f"{prefix}.{pn}", p.value))

        for name, layer in self.named_layers():
            walk(name, layer)
        return records

    def load_state_arrays(self, items):
        """Assign named tensors; verifies everything matches before any write."""
        from .errors import ArchitectureMismatchError

        params = dict(self.named_params())
        incoming = dict(items)
        for name, p in params.items():
            if name not in incoming:
                raise ArchitectureMismatchError(f"checkpoint missing tensor {name}",
                                                name)
            if tuple(np.shape(incoming[name])) != tuple(p.value.shape):
                raise ArchitectureMismatchError(
                    f"tensor {name}: checkpoint shape "
                    f"{tuple(np.shape(incoming[name]))} != model {p.value.shape}",
                    name,
                )
        extra = set(incoming) - set(params)
        if extra:
            name = sorted(extra)[0]
            raise ArchitectureMismatchError(f"unexpected tensor {name}", name)
        for name, p in params.items():
            p.value[...] = np.asarray(incoming[name], dtype=p.value.dtype)
