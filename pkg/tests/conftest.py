"""Shared test helpers: finite-difference gradients and relative error."""

import numpy as np


def numeric_gradient(f, arr, h=1e-5):
    """Central finite differences of scalar f() with respect to arr,
    perturbing arr in place coordinate by coordinate."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        f_plus = f()
        arr[idx] = orig - h
        f_minus = f()
        arr[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric):
    """max |a - n| / max(1, |a|, |n|): relative near unit scale, absolute
    for vanishing gradients so dead ReLU units do not inflate the ratio."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def sampled_rel_error(analytic, f, arr, rng, count=25, h=1e-5):
    """max_rel_error over `count` randomly chosen coordinates of arr,
    for whole-network checks where exhaustive sweeps are too slow."""
    flat = arr.reshape(-1)
    analytic_flat = analytic.reshape(-1)
    picks = rng.choice(flat.size, size=min(count, flat.size), replace=False)
    worst = 0.0
    for idx in picks:
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = f()
        flat[idx] = orig - h
        f_minus = f()
        flat[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        denom = max(1.0, abs(analytic_flat[idx]), abs(numeric))
        worst = max(worst, abs(analytic_flat[idx] - numeric) / denom)
    return worst
