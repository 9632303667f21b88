"""Synthetic blob corpus: bright soft disks on textured ground.

Used by the test suite and handy for demos: each image comes with a
ground-truth density map (Gaussian bumps at the blob centers) at the
network's 32x32 output resolution, so the full weak-label -> pretrain ->
fine-tune -> evaluate loop can run without any external dataset.
"""

import os

import numpy as np

from .imagecore import normalize_unit, write_pgm, write_ppm
from .weakset import WeakLabelRecord

BLOB_COLOR = (1.0, 0.95, 0.8)   # slightly warm so color channels react


def _smooth(noise, passes=2):
    for _ in range(passes):
        noise = (noise + np.roll(noise, 1, 0) + np.roll(noise, -1, 0)
                 + np.roll(noise, 1, 1) + np.roll(noise, -1, 1)) / 5.0
    return noise


def blob_image(rng, size=128, map_side=32):
    """One corpus sample: ((size, size, 3) image, (map_side, map_side)
    blob-density map), both in [0, 1]."""
    texture = normalize_unit(_smooth(rng.random((size, size))))
    img = np.repeat((0.2 + 0.22 * texture)[:, :, None], 3, axis=2)
    img += rng.normal(0.0, 0.01, img.shape)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    scale = size / map_side
    gy, gx = np.mgrid[0:map_side, 0:map_side].astype(np.float64)
    density = np.zeros((map_side, map_side))
    for _ in range(int(rng.integers(1, 4))):
        margin = 0.18 * size
        cy, cx = rng.uniform(margin, size - margin, size=2)
        radius = rng.uniform(0.08, 0.16) * size
        profile = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (radius / 2) ** 2))
        for c, tint in enumerate(BLOB_COLOR):
            img[:, :, c] += profile * (tint - img[:, :, c])
        density += np.exp(-((gy - cy / scale) ** 2 + (gx - cx / scale) ** 2)
                          / (2 * (radius / (2 * scale)) ** 2))
    return np.clip(img, 0.0, 1.0), normalize_unit(density)


def generate_corpus(images_dir, maps_dir, count, seed, size=128, map_side=32):
    """Write `count` PPM images and PGM density maps; returns manifest
    records whose map_path points at the ground-truth density."""
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(maps_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        image_id = f"blob{i:04d}"
        img, density = blob_image(rng, size=size, map_side=map_side)
        image_path = os.path.join(images_dir, image_id + ".ppm")
        map_path = os.path.join(maps_dir, image_id + ".pgm")
        write_ppm(image_path, img)
        write_pgm(map_path, density)
        records.append(WeakLabelRecord(image_id, image_path, map_path))
    return records
