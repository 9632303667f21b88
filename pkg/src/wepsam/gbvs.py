"""Graph-based weak saliency labels.

An image is reduced to seven feature channels at a 32x32 working
resolution (intensity, two color opponencies, four odd Gabor orientation
energies). Each channel drives a Markov chain on the pixel lattice whose
transitions prefer nearby, dissimilar pixels; the chain's equilibrium
distribution is the channel activation. A second, mass-concentrating
chain sharpens each activation, channels are summed, and the result is
rescaled to [0, 1].
"""

import warnings
from functools import lru_cache

import numpy as np

from .errors import ConvergenceWarning
from .imagecore import normalize_unit, resize_rgb, rgb_to_gray

WORKING_RES = 32
DEFAULT_SIGMA = 0.15 * WORKING_RES     # distance falloff for both chain passes
LOG_EPS = 1e-4                          # floor inside log(), maps are in [0, 1]

GABOR_SIZE = 9
GABOR_WAVELENGTH = 4.0
GABOR_SIGMA = 2.0

# Carrier-direction coefficients (cx, cy) per orientation. 45/135 use the
# same +-sqrt(1/2) constant so the bank is exactly closed under horizontal
# flip, which makes the whole pipeline flip-equivariant to rounding error.
_SQRT_HALF = np.sqrt(0.5)
ORIENTATIONS = (
    ("orient0", (0.0, 1.0)),
    ("orient45", (_SQRT_HALF, -_SQRT_HALF)),
    ("orient90", (1.0, 0.0)),
    ("orient135", (_SQRT_HALF, _SQRT_HALF)),
)


@lru_cache(maxsize=None)
def gabor_bank():
    """Odd-phase 9x9 Gabor kernels keyed by orientation channel name."""
    half = GABOR_SIZE // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    envelope = np.exp(-(x * x + y * y) / (2.0 * GABOR_SIGMA ** 2))
    bank = {}
    for name, (cx, cy) in ORIENTATIONS:
        carrier = cx * x + cy * y
        bank[name] = envelope * np.sin(2.0 * np.pi * carrier / GABOR_WAVELENGTH)
    return bank


def _correlate_same(map2d, kernel):
    """Same-size correlation of a small 2-D map with a kernel.

    Reflect padding: a constant input then yields an exactly constant
    response (no synthetic edges at the border)."""
    h, w = map2d.shape
    k = kernel.shape[0]
    pad = k // 2
    padded = np.pad(map2d, pad, mode="reflect")
    s = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded, (h, w, k, k), (s[0], s[1], s[0], s[1]), writeable=False)
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


NOISE_FLOOR = 1e-10


def _normalize_feature(map2d):
    # A channel whose full range is below the noise floor is numerical
    # dirt (real 8-bit signals are >= 1/255); zero it instead of letting
    # the unit rescale blow the noise up to full contrast.
    if map2d.max() - map2d.min() < NOISE_FLOOR:
        return np.zeros_like(map2d)
    return normalize_unit(map2d)


def extract_features(img, resolution=WORKING_RES):
    """Seven feature maps of an RGB image at the working resolution.

    Returns a dict in fixed channel order: intensity, rg, by, then the
    four Gabor orientation energies. Every map is normalized to [0, 1]
    (constant channels come out all-zero).
    """
    small = resize_rgb(img, resolution, resolution)
    r, g, b = small[:, :, 0], small[:, :, 1], small[:, :, 2]
    gray = rgb_to_gray(small)
    features = {
        "intensity": _normalize_feature(gray),
        "rg": _normalize_feature(r - g),
        "by": _normalize_feature(b - (r + g) / 2.0),
    }
    for name, kernel in gabor_bank().items():
        features[name] = _normalize_feature(np.abs(_correlate_same(gray, kernel)))
    return features


@lru_cache(maxsize=8)
def _lattice_falloff(h, w, sigma):
    """exp(-d^2 / 2 sigma^2) for all pairs of lattice nodes, shape (h*w, h*w)."""
    yy, xx = np.mgrid[0:h, 0:w]
    coords = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _row_normalize(weights):
    """Rows scaled to sum 1; an all-zero row becomes uniform over the
    other nodes (self excluded)."""
    n = weights.shape[0]
    sums = weights.sum(axis=1, keepdims=True)
    dead = sums[:, 0] == 0.0
    if dead.any():
        weights = weights.copy()
        weights[dead] = 1.0 / (n - 1)
        weights[dead, np.nonzero(dead)[0]] = 0.0
        sums = weights.sum(axis=1, keepdims=True)
    return weights / sums


def build_dissimilarity_chain(feature_map, sigma=DEFAULT_SIGMA):
    """Markov chain over the feature lattice with log-dissimilarity edges.

    Edge weight from a to b is |log(f(a)+eps) - log(f(b)+eps)| damped by a
    Gaussian in lattice distance; self-weight is 0 and rows are normalized
    to sum 1 (uniform fallback when a row has no mass, e.g. constant maps).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    f = np.asarray(feature_map, dtype=np.float64)
    if not np.isfinite(f).all():
        raise ValueError("feature map contains non-finite values")
    h, w = f.shape
    logf = np.log(f.ravel() + LOG_EPS)
    weights = np.abs(logf[:, None] - logf[None, :])
    weights *= _lattice_falloff(h, w, float(sigma))
    np.fill_diagonal(weights, 0.0)
    return _row_normalize(weights)


def equilibrium_distribution(chain, tol=1e-9, max_iter=10000):
    """Stationary distribution of a row-stochastic chain by power iteration.

    Iterates v <- (v + vP)/2 from the uniform vector; the averaging damps
    period-2 oscillation so the iteration also settles on periodic chains.
    Stops when the L1 residual ||vP - v|| drops to `tol`; emits a
    ConvergenceWarning if max_iter is hit first.
    """
    P = np.asarray(chain, dtype=np.float64)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"chain must be square, got {P.shape}")
    if (P < 0).any() or np.abs(P.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("chain is not row-stochastic")
    n = P.shape[0]
    v = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        vp = v @ P
        if np.abs(vp - v).sum() <= tol:
            break
        v = 0.5 * (v + vp)
    else:
        warnings.warn(
            f"power iteration did not reach tol={tol} in {max_iter} iterations",
            ConvergenceWarning, stacklevel=2)
    v = np.maximum(v, 0.0)
    return v / v.sum()


def concentrate(activation, sigma=DEFAULT_SIGMA, tol=1e-9, max_iter=10000):
    """Mass-concentration pass: a second chain pulls probability toward
    high-activation nodes.

    Edge weight from a to b is activation(b) scaled by the same Gaussian
    distance falloff; the returned map is that chain's equilibrium
    reshaped to the activation's grid.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    act = np.asarray(activation, dtype=np.float64)
    if (act < 0).any():
        raise ValueError("activation must be nonnegative")
    h, w = act.shape
    weights = act.ravel()[None, :] * _lattice_falloff(h, w, float(sigma))
    chain = _row_normalize(weights)
    return equilibrium_distribution(chain, tol=tol, max_iter=max_iter).reshape(h, w)


def gbvs_saliency(img, sigma=DEFAULT_SIGMA, tol=1e-9, max_iter=10000):
    """Weak saliency label for an RGB image: 32x32, values in [0, 1].

    Per channel: equilibrium of the dissimilarity chain, then the
    concentration pass; channel maps are summed and rescaled.
    """
    features = extract_features(img)
    total = np.zeros((WORKING_RES, WORKING_RES))
    for feature_map in features.values():
        chain = build_dissimilarity_chain(feature_map, sigma=sigma)
        activation = equilibrium_distribution(chain, tol=tol, max_iter=max_iter)
        total += concentrate(activation.reshape(WORKING_RES, WORKING_RES),
                             sigma=sigma, tol=tol, max_iter=max_iter)
    return normalize_unit(total)
