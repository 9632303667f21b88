"""Entropy scoring and selection of weak labels, plus dataset manifests.

A weak label is useful for pretraining when its mass is concentrated,
i.e. when the 256-bin histogram entropy of the map is low. Manifests are
JSON-lines files, one record per line, with keys image_id, image_path,
map_path, entropy_bits and split.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

HISTOGRAM_BINS = 256


@dataclass(frozen=True)
class WeakLabelRecord:
    image_id: str
    image_path: str
    map_path: str
    entropy_bits: float | None = None
    split: str = "train"


def histogram256(map2d):
    """256-bin histogram of a [0, 1] map; value v lands in bin
    min(floor(v*256), 255), so exactly-1.0 clamps into the top bin."""
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty map")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("map values outside [0, 1]")
    bins = np.minimum((arr * HISTOGRAM_BINS).astype(np.int64), HISTOGRAM_BINS - 1)
    return np.bincount(bins.ravel(), minlength=HISTOGRAM_BINS)


def entropy(map2d):
    """Histogram entropy in bits: -sum p_i log2 p_i over the 256 bins,
    with empty bins contributing zero."""
    counts = histogram256(map2d)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def select_low_entropy(records, k):
    """The k lowest-entropy records, sorted ascending; ties break on
    image_id so selection is reproducible."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    ordered = sorted(records, key=lambda r: (r.entropy_bits, r.image_id))
    return ordered[:k]


def write_manifest(path, records):
    """Write records as JSON lines. Image ids must be unique."""
    seen = set()
    for rec in records:
        if rec.image_id in seen:
            raise ValueError(f"duplicate image_id {rec.image_id!r} in manifest")
        seen.add(rec.image_id)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def read_manifest(path):
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            rec = WeakLabelRecord(
                image_id=obj["image_id"],
                image_path=obj["image_path"],
                map_path=obj["map_path"],
                entropy_bits=obj.get("entropy_bits"),
                split=obj.get("split", "train"),
            )
            if rec.image_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate image_id {rec.image_id!r}")
            seen.add(rec.image_id)
            records.append(rec)
    return records
