"""Segmentation and detection metrics: mIoU, Pd, and Fa.

Conventions (fixed here and stated in every report header):
- predictions binarize at `threshold` (strictly greater).
- connected components use 8-connectivity.
- a ground-truth target counts as detected when some predicted
  component's centroid lies within `match_dist` pixels of its centroid;
  matching is greedy nearest-first and one-to-one.
- Fa is the fraction of pixels in unmatched predicted components over
  all pixels, conventionally reported x1e-5.
- the headline mIoU aggregates TP/FP/FN over the whole set; the
  per-image mean is also computed.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError

_EIGHT = np.ones((3, 3), dtype=np.int8)


@dataclass
class MetricsReport:
    miou: float
    miou_per_image: float
    pd: float
    fa: float  # raw fraction; fa_x1e5 is the conventional scaling
    tp: int
    fp: int
    fn: int
    detected: int
    total_targets: int
    false_pixels: int
    total_pixels: int
    threshold: float
    match_dist: float

    @property
    def fa_x1e5(self):
        return self.fa * 1e5

    def header_lines(self):
        return [
            f"metric conventions: threshold > {self.threshold}; "
            "8-connected components;",
            f"detection = predicted-component centroid within "
            f"{self.match_dist} px of target centroid (greedy one-to-one);",
            "Fa = unmatched predicted pixels / total pixels (x1e-5); "
            "mIoU aggregates TP/FP/FN over the set",
        ]

    def to_kv_lines(self):
        return [
            f"miou={self.miou:.9f}",
            f"miou_per_image={self.miou_per_image:.9f}",
            f"pd={self.pd:.9f}",
            f"fa={self.fa:.9e}",
            f"fa_x1e5={self.fa_x1e5:.6f}",
            f"tp={self.tp}",
            f"fp={self.fp}",
            f"fn={self.fn}",
            f"detected={self.detected}",
            f"total_targets={self.total_targets}",
            f"false_pixels={self.false_pixels}",
            f"total_pixels={self.total_pixels}",
        ]

    def to_table(self):
        out = ["# " + line for line in self.header_lines()]
        out.append(f"{'metric':<16}{'value':>14}")
        out.append("-" * 30)
        out.append(f"{'mIoU':<16}{self.miou:>14.4f}")
        out.append(f"{'mIoU (mean)':<16}{self.miou_per_image:>14.4f}")
        out.append(f"{'Pd':<16}{self.pd:>14.4f}")
        out.append(f"{'Fa (x1e-5)':<16}{self.fa_x1e5:>14.4f}")
        return "\n".join(out)


def _check_pair_lists(preds, masks):
    if len(preds) != len(masks):
        raise DimensionError(f"{len(preds)} predictions vs {len(masks)} masks")
    pairs = []
    for p, m in zip(preds, masks):
        p = np.asarray(p)
        m = np.asarray(m)
        if p.ndim == 3 and p.shape[0] == 1:
            p = p[0]
        if m.ndim == 3 and m.shape[0] == 1:
            m = m[0]
        if p.shape != m.shape or p.ndim != 2:
            raise DimensionError(f"prediction {p.shape} vs mask {m.shape}")
        pairs.append((p, m))
    return pairs


def miou(preds, masks, threshold=0.5):
    """Dataset-aggregated intersection over union of the target class."""
    tp = fp = fn = 0
    for p, m in _check_pair_lists(preds, masks):
        pb = p > threshold
        mb = m > 0.5
        tp += int(np.sum(pb & mb))
        fp += int(np.sum(pb & ~mb))
        fn += int(np.sum(~pb & mb))
    union = tp + fp + fn
    return tp / union if union else 1.0


def miou_per_image(preds, masks, threshold=0.5):
    """Mean of per-image IoU (empty-vs-empty counts as 1)."""
    vals = []
    for p, m in _check_pair_lists(preds, masks):
        pb = p > threshold
        mb = m > 0.5
        inter = int(np.sum(pb & mb))
        union = int(np.sum(pb | mb))
        vals.append(inter / union if union else 1.0)
    return float(np.mean(vals)) if vals else 1.0


def _match_components(pred_bin, mask_bin, match_dist):
    """Greedy nearest-first centroid matching.

    Returns (n_targets, n_detected, pred_positive_pixels, matched_pixels).
    """
    lbl_p, n_p = ndimage.label(pred_bin, structure=_EIGHT)
    lbl_t, n_t = ndimage.label(mask_bin, structure=_EIGHT)
    pos_pixels = int(pred_bin.sum())
    if n_p == 0 or n_t == 0:
        return n_t, 0, pos_pixels, 0
    cent_p = ndimage.center_of_mass(pred_bin, lbl_p, range(1, n_p + 1))
    cent_t = ndimage.center_of_mass(mask_bin, lbl_t, range(1, n_t + 1))
    areas_p = ndimage.sum_labels(pred_bin, lbl_p, range(1, n_p + 1)).astype(int)
    candidates = []
    for ti, (ty, tx) in enumerate(cent_t):
        for pi, (py, px) in enumerate(cent_p):
            d = float(np.hypot(ty - py, tx - px))
            if d <= match_dist:
                candidates.append((d, ti, pi))
    candidates.sort()
    used_t, used_p = set(), set()
    matched_pixels = 0
    for d, ti, pi in candidates:
        if ti in used_t or pi in used_p:
            continue
        used_t.add(ti)
        used_p.add(pi)
        matched_pixels += int(areas_p[pi])
    return n_t, len(used_t), pos_pixels, matched_pixels


def pd_fa(preds, masks, threshold=0.5, match_dist=3.0):
    """(probability of detection, raw false-alarm pixel fraction)."""
    report = evaluate(preds, masks, threshold, match_dist)
    return report.pd, report.fa


def evaluate(preds, masks, threshold=0.5, match_dist=3.0):
    """All metrics over aligned prediction/mask lists."""
    pairs = _check_pair_lists(preds, masks)
    tp = fp = fn = 0
    detected = total_targets = 0
    false_pixels = total_pixels = 0
    per_image = []
    for p, m in pairs:
        pb = p > threshold
        mb = m > 0.5
        tp += int(np.sum(pb & mb))
        fp += int(np.sum(pb & ~mb))
        fn += int(np.sum(~pb & mb))
        inter = int(np.sum(pb & mb))
        union = int(np.sum(pb | mb))
        per_image.append(inter / union if union else 1.0)
        n_t, n_det, pos_pix, matched_pix = _match_components(pb, mb, match_dist)
        total_targets += n_t
        detected += n_det
        false_pixels += pos_pix - matched_pix
        total_pixels += pb.size
    union = tp + fp + fn
    return MetricsReport(
        miou=tp / union if union else 1.0,
        miou_per_image=float(np.mean(per_image)) if per_image else 1.0,
        pd=detected / total_targets if total_targets else 1.0,
        fa=false_pixels / total_pixels if total_pixels else 0.0,
        tp=tp,
        fp=fp,
        fn=fn,
        detected=detected,
        total_targets=total_targets,
        false_pixels=false_pixels,
        total_pixels=total_pixels,
        threshold=threshold,
        match_dist=match_dist,
    )
