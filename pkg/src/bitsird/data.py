"""Synthetic small-target infrared scenes and PGM image/mask I/O.

A scene is a pure function of (seed, index): smoothed noise background
plus a gradient ramp, a handful of isotropic Gaussian intensity bumps,
and sensor noise.  The mask marks pixels where a target's own
contribution exceeds half of that target's peak.
"""

import os
import re
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionError, FormatError, InvalidInputError

# minimum centre separation keeps targets' masks from merging
_MIN_SEPARATION = 12.0
_EDGE_MARGIN = 6


@dataclass(frozen=True)
class Target:
    cy: float
    cx: float
    sigma: float
    peak: float


@dataclass(frozen=True)
class SceneConfig:
    size: tuple = (64, 64)
    targets: tuple = (1, 4)
    sigma: tuple = (0.6, 2.5)
    contrast: tuple = (0.3, 1.0)
    clutter_blur: float = 6.0
    clutter_amp: float = 0.1
    ramp_amp: float = 0.1
    noise_sigma: float = 0.02
    base_level: float = 0.25
    seed: int = 0

    def __post_init__(self):
        size = self.size if isinstance(self.size, tuple) else (self.size, self.size)
        object.__setattr__(self, "size", tuple(int(s) for s in size))
        for name in ("targets", "sigma", "contrast"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidInputError(f"empty range for {name}: ({lo}, {hi})")


def generate_scene(cfg, index):
    """Deterministic scene for (cfg.seed, index).

    Returns (image [1, h, w] float32 in [0, 1], mask [h, w] uint8,
    list of Target records).
    """
    h, w = cfg.size
    rng = np.random.default_rng([cfg.seed, int(index)])

    clutter = gaussian_filter(rng.standard_normal((h, w)), cfg.clutter_blur,
                              mode="reflect")
    std = clutter.std()
    if std > 0:
        clutter /= std
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    gy, gx = rng.uniform(-1.0, 1.0, size=2)
    bg = (
        cfg.base_level
        + cfg.clutter_amp * clutter
        + cfg.ramp_amp * (gy * (yy / h - 0.5) + gx * (xx / w - 0.5))
    )

    n_want = int(rng.integers(cfg.targets[0], cfg.targets[1] + 1))
    targets = []
    mask = np.zeros((h, w), dtype=np.uint8)
    bumps = np.zeros((h, w), dtype=np.float64)
    for _ in range(n_want):
        placed = False
        for _try in range(200):
            cy = float(rng.integers(_EDGE_MARGIN, h - _EDGE_MARGIN))
            cx = float(rng.integers(_EDGE_MARGIN, w - _EDGE_MARGIN))
            cy += float(rng.uniform(-0.3, 0.3))
            cx += float(rng.uniform(-0.3, 0.3))
            if all(
                np.hypot(cy - t.cy, cx - t.cx) >= _MIN_SEPARATION for t in targets
            ):
                placed = True
                break
        if not placed:
            continue
        sigma = float(rng.uniform(*cfg.sigma))
        peak = float(rng.uniform(*cfg.contrast))
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        bump = peak * np.exp(-d2 / (2.0 * sigma * sigma))
        bumps += bump
        mask |= bump > 0.5 * peak
        targets.append(Target(cy, cx, sigma, peak))

    image = bg + bumps + rng.normal(0.0, cfg.noise_sigma, size=(h, w))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return image[None], mask, targets


class SyntheticDataset:
    """Lazily generated scene range [start, start + count)."""

    def __init__(self, cfg, start=0, count=200):
        self.cfg = cfg
        self.start = int(start)
        self.count = int(count)

    def __len__(self):
        return self.count

    def pair(self, i):
        image, mask, _ = generate_scene(self.cfg, self.start + i)
        return image, mask.astype(np.float32)

    def image(self, i):
        return self.pair(i)[0]

    def mask(self, i):
        return self.pair(i)[1]


class DirectoryDataset:
    """images/NNNN.pgm + masks/NNNN.pgm pairs under a root directory."""

    def __init__(self, root):
        img_dir = os.path.join(root, "images")
        msk_dir = os.path.join(root, "masks")
        if not os.path.isdir(img_dir) or not os.path.isdir(msk_dir):
            raise InvalidInputError(f"{root} needs images/ and masks/ directories")
        names = sorted(f for f in os.listdir(img_dir) if f.endswith(".pgm"))
        for name in names:
            if not os.path.exists(os.path.join(msk_dir, name)):
                raise InvalidInputError(f"mask missing for {name}")
        if not names:
            raise InvalidInputError(f"no .pgm images under {img_dir}")
        self.root = root
        self.names = names

    def __len__(self):
        return len(self.names)

    def pair(self, i):
        name = self.names[i]
        image = load_pgm(os.path.join(self.root, "images", name))
        mask = load_pgm(os.path.join(self.root, "masks", name))
        return image[None].astype(np.float32), (mask > 0.5).astype(np.float32)

    def image(self, i):
        return self.pair(i)[0]

    def mask(self, i):
        return self.pair(i)[1]


def export_dataset(ds, root):
    """Write a dataset to the images/ + masks/ directory convention."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    for i in range(len(ds)):
        image, mask = ds.pair(i)
        save_pgm(os.path.join(root, "images", f"{i:04d}.pgm"), image[0])
        save_pgm(os.path.join(root, "masks", f"{i:04d}.pgm"), mask, maxval=255)


def save_pgm(path, arr, maxval=65535):
    """Write a [h, w] array of [0, 1] values as a binary (P5) graymap."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DimensionError(f"PGM expects [h, w], got {arr.shape}")
    if maxval not in (255, 65535):
        raise InvalidInputError("maxval must be 255 or 65535")
    h, w = arr.shape
    quant = np.rint(np.clip(arr, 0.0, 1.0) * maxval)
    payload = quant.astype(">u2" if maxval > 255 else "u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(payload)


def _next_token(data, pos):
    """Skip whitespace/comments; return (token, new_pos) or raise."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("unexpected end of header", pos)
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def load_pgm(path):
    """Read a binary (P5) graymap into a [h, w] float32 array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _next_token(data, 0)
    if magic != b"P5":
        raise FormatError(f"not a binary PGM (magic {magic!r})", 0)
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        if not re.fullmatch(rb"\d+", tok):
            raise FormatError(f"bad header field {tok!r}", pos - len(tok))
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}", pos - len(str(maxval)))
    pos += 1  # single whitespace byte separates header and payload
    itemsize = 2 if maxval > 255 else 1
    expected = w * h * itemsize
    if len(data) - pos < expected:
        raise FormatError(
            f"truncated payload: need {expected} bytes, have {len(data) - pos}",
            len(data),
        )
    raw = np.frombuffer(data, dtype=">u2" if itemsize == 2 else "u1",
                        count=w * h, offset=pos)
    return (raw.reshape(h, w).astype(np.float32)) / maxval
