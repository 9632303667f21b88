"""Fixation-prediction metrics: AUC-Judd, AUC-Borji, CC, SIM, KL, NSS.

Conventions are pinned so every value is reproducible:

* AUC-Judd thresholds at the distinct saliency values of fixated pixels
  (descending), TPR/FPR computed with >= against fixations vs all
  non-fixated pixels, trapezoid area anchored at (0,0) and (1,1).
* AUC-Borji draws, per split, len(fixations) non-fixated pixels uniformly
  with replacement from a seeded generator and scores the same
  thresholded AUC against that negative multiset; splits average. A tie
  between a positive and a sampled negative contributes 1/2 through the
  trapezoid.
* KL is KL(gt || prediction) with natural log after adding 1e-12 per cell
  and renormalizing; NSS z-scores with the population standard deviation.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import MissingCounterpartError
from .imagecore import load_map, resize_bilinear

KL_EPSILON = 1e-12
METRIC_NAMES = ("auc_judd", "auc_borji", "cc", "sim", "kl", "nss")

_trapezoid = getattr(np, "trapezoid", None) or np.trapz   # numpy<2 fallback


def _check_pair(sal, other, name):
    sal = np.asarray(sal, dtype=np.float64)
    other = np.asarray(other)
    if sal.shape != other.shape:
        raise ValueError(f"{name}: shape mismatch {sal.shape} vs {other.shape}")
    return sal, other


def _as_fixations(fix):
    fix = np.asarray(fix)
    mask = fix > 0.5 if fix.dtype != bool else fix
    return mask


def _thresholded_auc(pos_values, neg_values):
    """ROC area with thresholds at the distinct positive values. Both
    value sets are 1-D; negatives may repeat (sampled multiset)."""
    thresholds = np.unique(pos_values)[::-1]
    pos_sorted = np.sort(pos_values)
    neg_sorted = np.sort(neg_values)
    # count of values >= t by binary search; comparisons stay exact
    tpr = (len(pos_sorted) - np.searchsorted(pos_sorted, thresholds)) / len(pos_sorted)
    fpr = (len(neg_sorted) - np.searchsorted(neg_sorted, thresholds)) / len(neg_sorted)
    tpr = np.concatenate(([0.0], tpr, [1.0]))
    fpr = np.concatenate(([0.0], fpr, [1.0]))
    return float(_trapezoid(tpr, fpr))


def auc_judd(sal, fix):
    """AUC with every non-fixated pixel as a negative."""
    sal, fix = _check_pair(sal, fix, "auc_judd")
    mask = _as_fixations(fix)
    if not mask.any():
        raise ValueError("auc_judd: no fixations")
    if mask.all():
        raise ValueError("auc_judd: every pixel fixated, no negatives")
    return _thresholded_auc(sal[mask], sal[~mask])


def auc_borji(sal, fix, n_splits=100, seed=0):
    """AUC against randomly sampled negatives, averaged over n_splits.

    Split s draws its negatives as the s-th consecutive
    `rng.integers(0, n_neg, size=n_fix)` call on
    `np.random.default_rng(seed)`; this draw order is part of the
    contract so runs are reproducible.
    """
    sal, fix = _check_pair(sal, fix, "auc_borji")
    mask = _as_fixations(fix)
    if not mask.any():
        raise ValueError("auc_borji: no fixations")
    if mask.all():
        raise ValueError("auc_borji: every pixel fixated, no negatives")
    pos = sal[mask]
    neg_pool = sal[~mask]
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_splits):
        neg = neg_pool[rng.integers(0, len(neg_pool), size=len(pos))]
        total += _thresholded_auc(pos, neg)
    return total / n_splits


def cc(sal, gt):
    """Pearson correlation of the two maps, flattened."""
    sal, gt = _check_pair(sal, gt, "cc")
    gt = gt.astype(np.float64)
    ds = sal - sal.mean()
    dg = gt - gt.mean()
    denom = np.sqrt((ds * ds).sum() * (dg * dg).sum())
    if denom == 0.0:
        raise ValueError("cc: constant input map")
    return float((ds * dg).sum() / denom)


def sim(sal, gt):
    """Histogram intersection of the sum-normalized maps."""
    sal, gt = _check_pair(sal, gt, "sim")
    gt = gt.astype(np.float64)
    if sal.sum() <= 0 or gt.sum() <= 0:
        raise ValueError("sim: map with no positive mass")
    return float(np.minimum(sal / sal.sum(), gt / gt.sum()).sum())


def kl_div(sal, gt):
    """KL(gt || sal), natural log, after epsilon-smoothing both maps."""
    sal, gt = _check_pair(sal, gt, "kl_div")
    p = gt.astype(np.float64) + KL_EPSILON
    q = sal + KL_EPSILON
    p /= p.sum()
    q /= q.sum()
    return float((p * np.log(p / q)).sum())


def nss(sal, fix):
    """Mean z-scored saliency at fixated pixels (population std)."""
    sal, fix = _check_pair(sal, fix, "nss")
    mask = _as_fixations(fix)
    if not mask.any():
        raise ValueError("nss: no fixations")
    std = sal.std()
    if std == 0.0:
        raise ValueError("nss: constant saliency map")
    z = (sal - sal.mean()) / std
    return float(z[mask].mean())


def score_pair(pred, gt, fix, n_splits=100, seed=0):
    """All six metrics for one image; the prediction is resampled to the
    ground-truth resolution first."""
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != gt.shape:
        pred = resize_bilinear(pred, *gt.shape)
    return {
        "auc_judd": auc_judd(pred, fix),
        "auc_borji": auc_borji(pred, fix, n_splits=n_splits, seed=seed),
        "cc": cc(pred, gt),
        "sim": sim(pred, gt),
        "kl": kl_div(pred, gt),
        "nss": nss(pred, fix),
    }


# ---------------------------------------------------------------------------
# Directory-level evaluation

_MAP_EXTENSIONS = (".png", ".pgm", ".ppm")


def _scan_ids(directory):
    found = {}
    for entry in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(entry)
        if ext.lower() in _MAP_EXTENSIONS:
            found[stem] = os.path.join(directory, entry)
    return found


@dataclass
class MetricReport:
    per_image: dict            # image_id -> {metric: value}
    aggregate: dict            # metric -> unweighted mean

    def to_json(self, path):
        payload = {"images": self.per_image, "aggregate": self.aggregate,
                   "n_images": len(self.per_image)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("image_id",) + METRIC_NAMES)
            for image_id in sorted(self.per_image):
                row = self.per_image[image_id]
                writer.writerow([image_id] + [repr(row[m]) for m in METRIC_NAMES])
            writer.writerow(["mean"] + [repr(self.aggregate[m]) for m in METRIC_NAMES])


def evaluate(pred_dir, gt_dir, fix_dir, n_splits=100, seed=0):
    """Score every image id found in all three directories.

    Ids are file stems; an id present in one directory but missing from
    another raises MissingCounterpartError. Fixation maps binarize at
    0.5. Aggregate values are unweighted means over images.
    """
    dirs = {"pred": _scan_ids(pred_dir), "gt": _scan_ids(gt_dir),
            "fix": _scan_ids(fix_dir)}
    all_ids = sorted(set().union(*[set(d) for d in dirs.values()]))
    if not all_ids:
        raise ValueError("no map files found in the evaluation directories")
    for image_id in all_ids:
        for name, mapping in dirs.items():
            if image_id not in mapping:
                raise MissingCounterpartError(image_id, f"{name} dir")
    per_image = {}
    for image_id in all_ids:
        pred = load_map(dirs["pred"][image_id])
        gt = load_map(dirs["gt"][image_id])
        fix = load_map(dirs["fix"][image_id]) > 0.5
        if fix.shape != gt.shape:
            raise ValueError(
                f"{image_id}: fixation shape {fix.shape} != gt shape {gt.shape}")
        per_image[image_id] = score_pair(pred, gt, fix, n_splits=n_splits, seed=seed)
    aggregate = {m: float(np.mean([per_image[i][m] for i in all_ids]))
                 for m in METRIC_NAMES}
    return MetricReport(per_image, aggregate)
