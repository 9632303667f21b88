"""Image I/O, color conversion and bilinear resampling.

All images and maps are numpy float arrays with values in [0, 1]:
RGB images are (H, W, 3), single-channel maps are (H, W). Binary
PGM (P5) / PPM (P6) files are parsed and written directly so that a
load -> save -> reload round trip is bit-exact; PNG goes through Pillow.
"""

import io
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# PNM (P5/P6) parsing

def _read_pnm_tokens(data, count):
    """Return `count` whitespace-separated header tokens and the offset just
    past the single whitespace byte that terminates the last one. Comment
    lines (#) are allowed between tokens."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise DecodeError("truncated PNM header")
        c = data[pos:pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise DecodeError("unterminated PNM comment")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DecodeError("PNM header not terminated by whitespace")
    return tokens, pos + 1


def _decode_pnm(data):
    magic = data[:2]
    channels = 1 if magic == b"P5" else 3
    tokens, offset = _read_pnm_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DecodeError(f"bad PNM header fields: {tokens}") from exc
    if width < 1 or height < 1:
        raise DecodeError(f"bad PNM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise DecodeError(f"unsupported PNM maxval {maxval} (8-bit only)")
    need = width * height * channels
    raster = data[2 + offset:2 + offset + need]
    if len(raster) != need:
        raise DecodeError("truncated PNM raster")
    pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / maxval
    if channels == 1:
        gray = pixels.reshape(height, width)
        return np.repeat(gray[:, :, None], 3, axis=2)
    return pixels.reshape(height, width, 3)


def load_image(path):
    """Load a PNG or binary PGM/PPM file as an (H, W, 3) array in [0, 1].

    Grayscale sources are replicated across the three channels. The format
    is sniffed from the file content, not the extension.

    Raises FileNotFoundError if the path does not exist and DecodeError if
    the content cannot be decoded.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P5", b"P6"):
        return _decode_pnm(data)
    try:
        with Image.open(io.BytesIO(data)) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.float64) / 255.0
                return np.repeat(arr[:, :, None], 3, axis=2)
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
            return arr
    except UnidentifiedImageError as exc:
        raise DecodeError(f"{path}: not a decodable PNG or PGM/PPM file") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def load_map(path):
    """Load a single-channel saliency/fixation map as (H, W) in [0, 1]."""
    return rgb_to_gray(load_image(path))


def _quantize(values):
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0),
                   0, 255).astype(np.uint8)


def _atomic_write(path, payload):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_pgm(path, map2d):
    """Write an (H, W) map in [0, 1] as binary PGM, maxval 255."""
    arr = np.asarray(map2d)
    if arr.ndim != 2:
        raise ValueError(f"PGM wants a 2-D map, got shape {arr.shape}")
    h, w = arr.shape
    _atomic_write(path, b"P5\n%d %d\n255\n" % (w, h) + _quantize(arr).tobytes())


def write_ppm(path, rgb):
    """Write an (H, W, 3) image in [0, 1] as binary PPM, maxval 255."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM wants (H, W, 3), got shape {arr.shape}")
    h, w, _ = arr.shape
    _atomic_write(path, b"P6\n%d %d\n255\n" % (w, h) + _quantize(arr).tobytes())


def write_png(path, array):
    """Write a map (H, W) or image (H, W, 3) in [0, 1] as an 8-bit PNG."""
    arr = np.asarray(array)
    if arr.ndim == 2:
        Image.fromarray(_quantize(arr), mode="L").save(path, format="PNG")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        Image.fromarray(_quantize(arr), mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"cannot encode shape {arr.shape} as PNG")


# ---------------------------------------------------------------------------
# Pixel math

def rgb_to_gray(img):
    """Luma projection 0.299 R + 0.587 G + 0.114 B of an (H, W, 3) image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got {img.shape}")
    r, g, b = LUMA_WEIGHTS
    return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]


def _axis_coords(src_dim, dst_dim):
    # Corner-aligned mapping: dst index i samples src at i*(S-1)/(D-1),
    # a 1-wide target collapses to the source center.
    if dst_dim == 1:
        coords = np.array([(src_dim - 1) / 2.0])
    else:
        coords = np.arange(dst_dim, dtype=np.float64) * ((src_dim - 1) / (dst_dim - 1))
    lo = np.floor(coords).astype(np.intp)
    lo = np.minimum(lo, src_dim - 1)
    hi = np.minimum(lo + 1, src_dim - 1)
    return lo, hi, coords - lo


def resize_bilinear(src, out_h, out_w):
    """Corner-aligned bilinear resampling of a 2-D map to (out_h, out_w).

    Corner samples map exactly onto source corners and the output never
    leaves the source value range. A same-size call is an exact copy.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {src.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"invalid target size {out_h}x{out_w}")
    h, w = src.shape
    if (out_h, out_w) == (h, w):
        return src.copy()
    y0, y1, wy = _axis_coords(h, out_h)
    x0, x1, wx = _axis_coords(w, out_w)
    # a + w*(b - a) keeps constants and grid-aligned samples exact
    top = src[np.ix_(y0, x0)]
    top += wx * (src[np.ix_(y0, x1)] - top)
    bot = src[np.ix_(y1, x0)]
    bot += wx * (src[np.ix_(y1, x1)] - bot)
    out = top + wy[:, None] * (bot - top)
    return np.clip(out, src.min(), src.max())


def resize_rgb(img, out_h, out_w):
    """Bilinear resize of an (H, W, 3) image, channel by channel."""
    img = np.asarray(img, dtype=np.float64)
    return np.stack([resize_bilinear(img[:, :, c], out_h, out_w)
                     for c in range(3)], axis=2)


def normalize_unit(map2d):
    """Affine rescale to [0, 1]; a constant map becomes all zeros.

    A constant map carries no contrast, so it is mapped to the bottom of
    the range rather than an arbitrary mid value.
    """
    arr = np.asarray(map2d, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("normalize_unit: input contains non-finite values")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)
