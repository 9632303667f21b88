"""Shallow saliency CNN with hand-written forward and backward passes.

Topology: three CONV-ReLU-MAXPOOL stages, then two fully connected
layers with a pairwise maxout on the last one, regressed against a
flattened saliency map with mean squared error. A 128x128 RGB input
produces a 1024-vector (the 32x32 map); the same layer stack scales
down for cheap gradient checking via `NetConfig`.

Everything here is dtype-polymorphic: float32 for training throughput,
float64 when tests need finite-difference-grade precision. Internal
array layout is batched (N, C, H, W); the thin op wrappers also accept
single samples.
"""

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, CheckpointMismatchError

WEIGHT_STD = 0.01
BIAS_INIT = 0.1
CHECKPOINT_MAGIC = b"WEPSAM01"

_LAYERS = ("conv1", "conv2", "conv3", "fc1", "fc2")


@dataclass(frozen=True)
class NetConfig:
    """Layer widths; the default is the full-size network."""
    input_size: int = 128
    conv_channels: tuple = (32, 64, 128)
    conv_kernels: tuple = (5, 3, 3)
    fc1_width: int = 2048
    maxout_pieces: int = 2

    def __post_init__(self):
        if self.input_size < 8 or self.input_size % 8:
            raise ValueError("input_size must be a multiple of 8 (three 2x2 pools)")
        if len(self.conv_channels) != 3 or len(self.conv_kernels) != 3:
            raise ValueError("expected exactly three conv stages")
        if self.maxout_pieces < 2:
            raise ValueError("maxout needs at least 2 pieces")

    @property
    def map_side(self):
        """Side of the square output map (input_size // 4)."""
        return self.input_size // 4

    @property
    def output_units(self):
        return self.map_side ** 2

    @property
    def flat_units(self):
        """Flattened size after the third pool: (input/8)^2 * channels."""
        return (self.input_size // 8) ** 2 * self.conv_channels[2]

    def param_shapes(self):
        c1, c2, c3 = self.conv_channels
        k1, k2, k3 = self.conv_kernels
        return {
            "conv1_w": (c1, 3, k1, k1), "conv1_b": (c1,),
            "conv2_w": (c2, c1, k2, k2), "conv2_b": (c2,),
            "conv3_w": (c3, c2, k3, k3), "conv3_b": (c3,),
            "fc1_w": (self.fc1_width, self.flat_units), "fc1_b": (self.fc1_width,),
            "fc2_w": (self.output_units * self.maxout_pieces, self.fc1_width),
            "fc2_b": (self.output_units * self.maxout_pieces,),
        }


DEFAULT_CONFIG = NetConfig()


@dataclass
class NetworkParams:
    """Learnable tensors plus their momentum velocities."""
    config: NetConfig
    weights: dict
    velocity: dict = field(default_factory=dict)

    def copy(self):
        return NetworkParams(
            self.config,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.velocity.items()},
        )


def init_params(seed, config=DEFAULT_CONFIG, dtype=np.float32):
    """Fresh parameters: weights ~ N(0, 0.01^2), every bias 0.1, zero
    velocities. The draw order is fixed, so a seed pins every value."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in config.param_shapes().items():
        if name.endswith("_w"):
            weights[name] = rng.standard_normal(shape, dtype=dtype) * dtype(WEIGHT_STD)
        else:
            weights[name] = np.full(shape, BIAS_INIT, dtype=dtype)
    velocity = {k: np.zeros_like(v) for k, v in weights.items()}
    return NetworkParams(config, weights, velocity)


# ---------------------------------------------------------------------------
# Layer ops. *_forward/*_backward work on batched arrays and carry explicit
# caches; the short-named wrappers are forward-only and also take single
# samples.

def _im2col(x, k, pad):
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded, (n, c, k, k, h, w), (s[0], s[1], s[2], s[3], s[2], s[3]),
        writeable=False)
    return np.ascontiguousarray(windows.transpose(0, 4, 5, 1, 2, 3)
                                ).reshape(n * h * w, c * k * k)


def conv2d_forward(x, w, b):
    """Same-padded stride-1 convolution. x (N,C,H,W), w (F,C,k,k), b (F)."""
    n, c, h, wd = x.shape
    f, cin, k, k2 = w.shape
    if cin != c or k != k2 or k % 2 == 0:
        raise ValueError(f"kernel {w.shape} incompatible with input {x.shape}")
    if b.shape != (f,):
        raise ValueError(f"bias shape {b.shape} != ({f},)")
    cols = _im2col(x, k, k // 2)
    y = cols @ w.reshape(f, -1).T
    y += b
    y = y.reshape(n, h, wd, f).transpose(0, 3, 1, 2)
    return y, (cols, w, x.shape)


def conv2d_backward(grad, cache, need_dx=True):
    cols, w, x_shape = cache
    n, c, h, wd = x_shape
    f = w.shape[0]
    k = w.shape[2]
    pad = k // 2
    gm = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(n * h * wd, f)
    dw = (gm.T @ cols).reshape(w.shape)
    db = gm.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (gm @ w.reshape(f, -1)).reshape(n, h, wd, c, k, k)
    dpad = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=grad.dtype)
    for u in range(k):
        for v in range(k):
            dpad[:, :, u:u + h, v:v + wd] += dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    dx = dpad[:, :, pad:pad + h, pad:pad + wd]
    return dx, dw, db


def conv2d(x, w, b):
    x = np.asarray(x)
    if x.ndim == 3:
        return conv2d_forward(x[None], np.asarray(w), np.asarray(b))[0][0]
    return conv2d_forward(x, np.asarray(w), np.asarray(b))[0]


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad, x):
    return grad * (x > 0)


def maxpool2_forward(x):
    """2x2 max pooling, stride 2. Ties resolve to the first position in
    row-major window order, which is where the backward pass routes."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = np.ascontiguousarray(windows).reshape(n, c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_backward(grad, cache):
    idx, (n, c, h, w) = cache
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
    np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=-1)
    dwin = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dwin.reshape(n, c, h, w)


def maxpool2(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return maxpool2_forward(x[None])[0][0]
    return maxpool2_forward(x)[0]


def fc_forward(x, w, b):
    if x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"fc shapes disagree: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w.T + b, (x, w)


def fc_backward(grad, cache):
    x, w = cache
    return grad @ w, grad.T @ x, grad.sum(axis=0)


def fully_connected(x, w, b):
    x = np.asarray(x)
    if x.ndim == 1:
        return fc_forward(x[None], np.asarray(w), np.asarray(b))[0][0]
    return fc_forward(x, np.asarray(w), np.asarray(b))[0]


def maxout_forward(x, pieces):
    """Max over groups of `pieces` consecutive units: y[i] = max of
    x[pieces*i : pieces*(i+1)]. Ties route gradient to the first index."""
    n, m = x.shape
    if m % pieces:
        raise ValueError(f"input length {m} not divisible by {pieces} pieces")
    groups = x.reshape(n, m // pieces, pieces)
    idx = groups.argmax(axis=-1)
    y = np.take_along_axis(groups, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape, pieces)


def maxout_backward(grad, cache):
    idx, (n, m), pieces = cache
    dg = np.zeros((n, m // pieces, pieces), dtype=grad.dtype)
    np.put_along_axis(dg, idx[..., None], grad[..., None], axis=-1)
    return dg.reshape(n, m)


def maxout(x, pieces=2):
    x = np.asarray(x)
    if x.ndim == 1:
        return maxout_forward(x[None], pieces)[0][0]
    return maxout_forward(x, pieces)[0]


def mse_loss(pred, target):
    """Mean elementwise squared error over all entries (per-sample mean
    for a single vector, batch mean of per-sample means for a batch)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float((diff * diff).mean())


def mse_loss_with_grad(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, (2.0 / diff.size) * diff


# ---------------------------------------------------------------------------
# Whole-network passes

def standardize_input(img_chw, eps=1e-6):
    """Per-image, per-channel zero mean / unit variance (std floored)."""
    mean = img_chw.mean(axis=(1, 2), keepdims=True)
    std = img_chw.std(axis=(1, 2), keepdims=True)
    return (img_chw - mean) / np.maximum(std, eps)


def _forward_cached(params, x):
    w = params.weights
    a1, c1 = conv2d_forward(x, w["conv1_w"], w["conv1_b"])
    r1 = relu(a1)
    p1, pc1 = maxpool2_forward(r1)
    a2, c2 = conv2d_forward(p1, w["conv2_w"], w["conv2_b"])
    r2 = relu(a2)
    p2, pc2 = maxpool2_forward(r2)
    a3, c3 = conv2d_forward(p2, w["conv3_w"], w["conv3_b"])
    r3 = relu(a3)
    p3, pc3 = maxpool2_forward(r3)
    flat = p3.reshape(x.shape[0], -1)
    f1, fc1c = fc_forward(flat, w["fc1_w"], w["fc1_b"])
    rf1 = relu(f1)
    f2, fc2c = fc_forward(rf1, w["fc2_w"], w["fc2_b"])
    y, mc = maxout_forward(f2, params.config.maxout_pieces)
    cache = (a1, c1, pc1, a2, c2, pc2, a3, c3, pc3, fc1c, f1, fc2c, mc)
    return y, cache


def forward(params, x):
    """Network output for input x of shape (3, S, S) or (N, 3, S, S)."""
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    s = params.config.input_size
    if x.shape[1:] != (3, s, s):
        raise ValueError(f"expected input (N, 3, {s}, {s}), got {x.shape}")
    y = _forward_cached(params, x)[0]
    return y[0] if single else y


def loss_and_gradients(params, x, targets):
    """Batch MSE loss and its gradient for every parameter tensor.

    x is (N, 3, S, S); targets is (N, output_units). The input gradient of
    the first convolution is never needed, so it is not computed.
    """
    y, cache = _forward_cached(params, x)
    (a1, c1, pc1, a2, c2, pc2, a3, c3, pc3, fc1c, f1, fc2c, mc) = cache
    loss, dy = mse_loss_with_grad(y, targets)
    grads = {}
    g = maxout_backward(dy, mc)
    g, grads["fc2_w"], grads["fc2_b"] = fc_backward(g, fc2c)
    g = relu_backward(g, f1)
    g, grads["fc1_w"], grads["fc1_b"] = fc_backward(g, fc1c)
    g = g.reshape(pc3[1][0], pc3[1][1], pc3[1][2] // 2, pc3[1][3] // 2)
    g = maxpool2_backward(g, pc3)
    g = relu_backward(g, a3)
    g, grads["conv3_w"], grads["conv3_b"] = conv2d_backward(g, c3)
    g = maxpool2_backward(g, pc2)
    g = relu_backward(g, a2)
    g, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(g, c2)
    g = maxpool2_backward(g, pc1)
    g = relu_backward(g, a1)
    _, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(g, c1, need_dx=False)
    return loss, grads


# ---------------------------------------------------------------------------
# Checkpoints: magic, then per tensor <u32 name_len><name><u32 rank>
# <u32 dims...><f32 data...>, all little-endian. Velocities are stored
# as "<name>_vel" rows next to their weights.

def save_checkpoint(path, params):
    """Write weights and velocities; the write is atomic (tmp + rename)."""
    chunks = [CHECKPOINT_MAGIC]
    items = [(k, params.weights[k]) for k in sorted(params.weights)]
    items += [(k + "_vel", params.velocity[k]) for k in sorted(params.velocity)]
    for name, tensor in items:
        data = np.ascontiguousarray(tensor, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _infer_config(tensors):
    try:
        channels = tuple(tensors[f"conv{i}_w"].shape[0] for i in (1, 2, 3))
        kernels = tuple(tensors[f"conv{i}_w"].shape[2] for i in (1, 2, 3))
        fc1_width, flat = tensors["fc1_w"].shape
        fc2_out = tensors["fc2_w"].shape[0]
    except KeyError as exc:
        raise CheckpointMismatchError(f"checkpoint missing tensor {exc}") from exc
    spatial = math.isqrt(flat // channels[2])
    input_size = spatial * 8
    map_units = (input_size // 4) ** 2
    if spatial * spatial * channels[2] != flat or fc2_out % map_units:
        raise CheckpointMismatchError("checkpoint tensor shapes are inconsistent")
    return NetConfig(input_size=input_size, conv_channels=channels,
                     conv_kernels=kernels, fc1_width=fc1_width,
                     maxout_pieces=fc2_out // map_units)


def load_checkpoint(path):
    """Read a checkpoint back into NetworkParams, rejecting unknown magic
    and any tensor set that does not form a consistent network."""
    tensors = {}
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: unknown checkpoint magic")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * count, f"tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    weights = {k: v for k, v in tensors.items() if not k.endswith("_vel")}
    velocity = {k[:-4]: v for k, v in tensors.items() if k.endswith("_vel")}
    config = _infer_config(weights)
    expected = config.param_shapes()
    for name, shape in expected.items():
        if name not in weights or weights[name].shape != shape:
            raise CheckpointMismatchError(f"bad or missing tensor {name}")
        if name not in velocity or velocity[name].shape != shape:
            raise CheckpointMismatchError(f"bad or missing velocity for {name}")
    if set(weights) != set(expected):
        extra = set(weights) - set(expected)
        raise CheckpointMismatchError(f"unexpected tensors {sorted(extra)}")
    return NetworkParams(config, weights, velocity)
