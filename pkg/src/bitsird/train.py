"""SoftIoU loss, AdamW, cosine schedule, and the training loop."""

import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .errors import DimensionError, DivergenceError, InvalidInputError
from .metrics import evaluate


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x)
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def _check_loss_inputs(logits, mask):
    logits = np.asarray(logits)
    mask = np.asarray(mask)
    if logits.shape != mask.shape:
        raise DimensionError(f"logits {logits.shape} vs mask {mask.shape}")
    if mask.size and not np.all((mask == 0) | (mask == 1)):
        raise InvalidInputError("mask must be binary {0, 1}")
    return logits, mask


def soft_iou_loss(logits, mask, eps=1.0):
    """1 - smoothed IoU between sigmoid(logits) and the binary mask.

    eps = 1 keeps the ratio defined on empty masks; loss is in [0, 1).
    """
    logits, mask = _check_loss_inputs(logits, mask)
    p = sigmoid(logits).astype(np.float64)
    inter = float(np.sum(p * mask))
    union = float(np.sum(p) + np.sum(mask) - inter)
    return 1.0 - (inter + eps) / (union + eps)


def soft_iou_loss_grad(logits, mask, eps=1.0):
    """(loss, d loss / d logits)."""
    logits, mask = _check_loss_inputs(logits, mask)
    p = sigmoid(logits).astype(np.float64)
    y = np.asarray(mask, dtype=np.float64)
    inter = float(np.sum(p * y))
    union = float(np.sum(p) + np.sum(y) - inter)
    loss = 1.0 - (inter + eps) / (union + eps)
    # d/dp of -(I+eps)/(U+eps) with dI/dp = y, dU/dp = 1 - y
    dp = -(y * (union + eps) - (inter + eps) * (1.0 - y)) / (union + eps) ** 2
    return loss, dp * p * (1.0 - p)


def cosine_lr(step, total_steps, base_lr):
    """Half-cosine decay from base_lr at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise InvalidInputError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.t = 0
        self.m = {}
        self.v = {}


def adamw_step(params, grads, state, lr, weight_decay=0.0, betas=(0.9, 0.999),
               eps=1e-8, no_decay=(), clamp_min=None):
    """One decoupled-weight-decay adaptive-moment update, in place.

    params / grads : dicts name -> array (matching shapes).
    no_decay names skip the decay term; clamp_min maps names to a floor
    applied after the update (used for the sign-site sharpness k).
    """
    state.t += 1
    b1, b2 = betas
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"grad shape {g.shape} != param {p.shape} ({name})")
        m = state.m.setdefault(name, np.zeros(p.shape, dtype=np.float64))
        v = state.v.setdefault(name, np.zeros(p.shape, dtype=np.float64))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay and name not in no_decay:
            p[...] = p - lr * weight_decay * p - update
        else:
            p[...] = p - update
        if clamp_min and name in clamp_min:
            np.maximum(p, clamp_min[name], out=p)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 3e-3
    weight_decay: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.lr <= 0:
            raise InvalidInputError("epochs, batch_size and lr must be positive")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    miou: float
    pd: float
    fa: float
    lr: float
    k: dict

    def to_line(self):
        base = (
            f"epoch={self.epoch} loss={self.loss:.6f} miou={self.miou:.6f} "
            f"pd={self.pd:.6f} fa={self.fa:.6e} lr={self.lr:.6e}"
        )
        ks = " ".join(f"k.{name}={val:.6e}" for name, val in self.k.items())
        return base + (" " + ks if ks else "")


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def final(self):
        return self.records[-1]

    @property
    def best(self):
        return self.records[self.best_epoch]

    def k_trajectory(self, name):
        return [r.k[name] for r in self.records]

    def to_lines(self):
        lines = [r.to_line() for r in self.records]
        lines.append(f"best_epoch={self.best_epoch}")
        return lines


def _batches(n, batch_size, order=None):
    idx = np.arange(n) if order is None else order
    for i in range(0, n, batch_size):
        yield idx[i : i + batch_size]


def predict_probabilities(model, dataset, batch_size=8):
    """Sigmoid probability maps for every item of a dataset."""
    preds = []
    for batch in _batches(len(dataset), batch_size):
        imgs = np.stack([dataset.image(int(i)) for i in batch])
        logits = model.forward(imgs)
        preds.extend(sigmoid(logits[:, 0]))
    return preds


def train_loop(model, train_ds, val_ds, cfg, out_dir=None, eval_threshold=0.5,
               match_dist=3.0):
    """Deterministic training run; returns the per-epoch TrainReport.

    Writes final.ckpt, best.ckpt (highest validation mIoU) and report.txt
    under out_dir when given.  Aborts with DivergenceError naming the
    first offending layer if the loss goes non-finite.
    """
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    named = model.named_params()
    params = {n: p.value for n, p in named}
    grads = {n: p.grad for n, p in named}
    no_decay = {n for n, p in named if not p.decay}
    clamp = {n: p.clamp_min for n, p in named if p.clamp_min is not None}
    state = AdamState()

    n_train = len(train_ds)
    steps_per_epoch = (n_train + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    val_masks = [val_ds.mask(i) for i in range(len(val_ds))]

    report = TrainReport()
    best_miou = -1.0
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        losses = []
        lr = cfg.lr
        for batch in _batches(n_train, cfg.batch_size, order):
            imgs = np.stack([train_ds.image(int(i)) for i in batch])
            masks = np.stack([train_ds.mask(int(i)) for i in batch])
            logits = model.forward(imgs, train=True)
            loss, dlogits = soft_iou_loss_grad(logits[:, 0], masks)
            if not np.isfinite(loss):
                model.forward(imgs, check=True)  # names the offending layer
                raise DivergenceError("non-finite loss", "loss")
            lr = cosine_lr(step, total_steps, cfg.lr)
            model.zero_grad()
            model.backward(dlogits[:, None])
            adamw_step(params, grads, state, lr, cfg.weight_decay, cfg.betas,
                       cfg.eps, no_decay, clamp)
            losses.append(loss)
            step += 1
        preds = predict_probabilities(model, val_ds, cfg.batch_size)
        scores = evaluate(preds, val_masks, eval_threshold, match_dist)
        report.records.append(
            EpochRecord(epoch, float(np.mean(losses)), scores.miou, scores.pd,
                        scores.fa, lr, model.k_values())
        )
        if scores.miou > best_miou:
            best_miou = scores.miou
            report.best_epoch = epoch
            if out_dir:
                save_checkpoint(os.path.join(out_dir, "best.ckpt"),
                                model.state_arrays())
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), model.state_arrays())
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write("\n".join(report.to_lines()) + "\n")
    return report
