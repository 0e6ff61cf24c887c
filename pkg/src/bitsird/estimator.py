"""Scikit-learn style estimator wrapper around the segmentation engine."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import SyntheticDataset
from .errors import DimensionError, InvalidInputError
from .metrics import evaluate
from .network import Model, NetConfig
from .train import TrainConfig, sigmoid, train_loop


class _ArrayDataset:
    """Adapts (images, masks) arrays to the dataset interface."""

    def __init__(self, images, masks):
        self.images = images
        self.masks = masks

    def __len__(self):
        return len(self.images)

    def image(self, i):
        return self.images[i]

    def mask(self, i):
        return self.masks[i]


def _check_images(X):
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3:
        raise DimensionError(f"expected images [n, h, w], got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("images must be finite")
    h, w = X.shape[1:]
    if h % 4 or w % 4:
        raise DimensionError(f"extents must be divisible by 4, got {h}x{w}")
    return X


def _check_masks(y, X):
    y = np.asarray(y, dtype=np.float32)
    if y.ndim == 4 and y.shape[1] == 1:
        y = y[:, 0]
    if y.shape != X.shape:
        raise DimensionError(f"masks {y.shape} do not match images {X.shape}")
    if y.size and not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("masks must be binary {0, 1}")
    return y


class BinarySegmenter(BaseEstimator):
    """1-bit small-target segmenter with a fit/predict interface.

    X is an [n, h, w] stack of grayscale images in [0, 1] (h, w divisible
    by 4); y the matching binary masks.  predict_proba returns per-pixel
    target probabilities, predict thresholded masks.
    """

    def __init__(self, stage_channels=(16, 32, 64), blocks=(1, 2, 5),
                 surrogate="dysoftsign", k_init=0.001, epochs=60, lr=3e-3,
                 weight_decay=1e-4, batch_size=8, validation_fraction=0.2,
                 threshold=0.5, match_dist=3.0, seed=0):
        self.stage_channels = stage_channels
        self.blocks = blocks
        self.surrogate = surrogate
        self.k_init = k_init
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.threshold = threshold
        self.match_dist = match_dist
        self.seed = seed

    def _net_config(self):
        return NetConfig(
            stage_channels=tuple(self.stage_channels),
            blocks=tuple(self.blocks),
            surrogate=self.surrogate,
            k_init=self.k_init,
        )

    def fit(self, X, y):
        X = _check_images(X)
        y = _check_masks(y, X)
        if len(X) < 2:
            raise DimensionError("need at least two images to fit")
        n_val = max(1, int(round(len(X) * self.validation_fraction)))
        n_val = min(n_val, len(X) - 1)
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(X))
        val_idx, train_idx = order[:n_val], order[n_val:]
        train_ds = _ArrayDataset(X[train_idx][:, None], y[train_idx])
        val_ds = _ArrayDataset(X[val_idx][:, None], y[val_idx])
        self.model_ = Model(self._net_config(), seed=self.seed)
        cfg = TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        self.report_ = train_loop(
            self.model_, train_ds, val_ds, cfg,
            eval_threshold=self.threshold, match_dist=self.match_dist,
        )
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit the segmenter before predicting")

    def predict_proba(self, X):
        """Per-pixel target probabilities, [n, h, w]."""
        self._require_fitted()
        X = _check_images(X)
        out = []
        for i in range(0, len(X), self.batch_size):
            logits = self.model_.forward(X[i : i + self.batch_size][:, None])
            out.append(sigmoid(logits[:, 0]))
        return np.concatenate(out, axis=0)

    def predict(self, X):
        """Binary masks thresholded at `threshold`."""
        return (self.predict_proba(X) > self.threshold).astype(np.uint8)

    def score(self, X, y):
        """Dataset-aggregated IoU of the target class."""
        self._require_fitted()
        X = _check_images(X)
        y = _check_masks(y, X)
        probs = self.predict_proba(X)
        return evaluate(list(probs), list(y), self.threshold,
                        self.match_dist).miou

    def evaluation_report(self, X, y):
        """Full MetricsReport (mIoU, Pd, Fa and counts) on (X, y)."""
        self._require_fitted()
        X = _check_images(X)
        y = _check_masks(y, X)
        probs = self.predict_proba(X)
        return evaluate(list(probs), list(y), self.threshold, self.match_dist)


def synthetic_arrays(count, size=64, seed=0, start=0):
    """Convenience: (images [n, h, w], masks [n, h, w]) synthetic stacks."""
    from .data import SceneConfig

    ds = SyntheticDataset(SceneConfig(size=size, seed=seed), start, count)
    images = np.stack([ds.image(i)[0] for i in range(count)])
    masks = np.stack([ds.mask(i) for i in range(count)])
    return images, masks
