"""Two-stage training: weak pretraining and fine-tuning.

Both stages share one loop: seeded shuffling, minibatch SGD with
Nesterov momentum, a geometric learning-rate decay between the two
schedule endpoints, per-epoch train/validation loss logging, and
checkpointing. A stage is fully determined by (seed, manifests, config),
so reruns are byte-identical.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import net
from .errors import CheckpointMismatchError, NonFiniteError
from .net import DEFAULT_CONFIG, NetConfig
from .imagecore import load_image, load_map, resize_bilinear, resize_rgb
from .weakset import read_manifest

PRETRAIN_EPOCHS = 500
FINETUNE_EPOCHS = 1200


@dataclass
class TrainConfig:
    stage: str = "finetune"
    epochs: int = FINETUNE_EPOCHS
    batch_size: int = 32
    lr_start: float = 0.3
    lr_end: float = 1e-4
    momentum: float = 0.9
    seed: int = 0
    init: str = "random"               # "random" or a checkpoint path
    net: NetConfig = DEFAULT_CONFIG
    checkpoint_every: int = 50          # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr_start >= self.lr_end >= 0.0:
            raise ValueError("need lr_start >= lr_end >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class LossRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def lr_schedule(epoch, total, lr_start, lr_end):
    """Learning rate for `epoch` of `total`: geometric interpolation from
    lr_start down to lr_end, hitting both endpoints exactly."""
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    if not lr_start >= lr_end >= 0.0:
        raise ValueError("need lr_start >= lr_end >= 0")
    if total == 1 or lr_start == lr_end:
        return lr_start
    if lr_end == 0.0:
        raise ValueError("geometric schedule needs lr_end > 0")
    return lr_start * (lr_end / lr_start) ** (epoch / (total - 1))


def nesterov_step(weights, grads, velocity, lr, mu):
    """One Nesterov momentum update, in place:
    v <- mu*v - lr*g ; p <- p + mu*v - lr*g.

    Gradient arrays are consumed as scratch space; with tens of millions
    of parameters per step, fresh temporaries would dominate the cost.
    """
    if set(grads) != set(weights):
        raise ValueError("gradient keys do not match parameter keys")
    for name, g in grads.items():
        w = weights[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.isfinite(g.sum()):
            raise NonFiniteError(f"non-finite gradient in {name}")
        v = velocity[name]
        g *= lr            # g := lr*g
        v *= mu
        v -= g             # v := mu*v - lr*g
        w -= g
        np.multiply(v, mu, out=g)
        w += g             # w := w + mu*v_new - lr*g
    return weights, velocity


# ---------------------------------------------------------------------------
# Dataset loading

def load_pair(record, config, dtype=np.float32):
    """One training pair: standardized (3, S, S) input and the flattened
    target map, resampled to the network's output grid if needed."""
    img = load_image(record.image_path)
    s = config.input_size
    if img.shape[:2] != (s, s):
        img = resize_rgb(img, s, s)
    x = net.standardize_input(img.transpose(2, 0, 1)).astype(dtype)
    target = load_map(record.map_path)
    side = config.map_side
    if target.shape != (side, side):
        target = resize_bilinear(target, side, side)
    t = np.clip(target, 0.0, 1.0).ravel().astype(dtype)
    return x, t


def _load_dataset(records, config, dtype=np.float32):
    xs, ts = zip(*(load_pair(rec, config, dtype) for rec in records))
    return np.stack(xs), np.stack(ts)


def _mean_loss(params, x, t, batch_size):
    total = 0.0
    for lo in range(0, len(x), batch_size):
        xb = x[lo:lo + batch_size]
        total += net.mse_loss(net.forward(params, xb), t[lo:lo + batch_size]) * len(xb)
    return total / len(x)


def _resolve_records(manifest):
    if isinstance(manifest, (str, os.PathLike)):
        return read_manifest(manifest)
    return list(manifest)


def init_stage_params(cfg):
    """Starting parameters for a stage: a seeded random init, or weights
    from a checkpoint (with fresh velocities — each stage is its own
    optimization run)."""
    if cfg.init == "random":
        return net.init_params(cfg.seed, cfg.net)
    params = net.load_checkpoint(cfg.init)
    if params.config != cfg.net:
        raise CheckpointMismatchError(
            f"checkpoint architecture {params.config} != configured {cfg.net}")
    params.velocity = {k: np.zeros_like(v) for k, v in params.weights.items()}
    return params


def train_stage(train_manifest, val_manifest, cfg, out_dir=None):
    """Run one training stage; returns (params, loss rows).

    Manifests may be paths to JSONL files or record sequences. Per epoch:
    seeded shuffle, minibatch updates at the scheduled rate (the ragged
    final batch is kept, weighted by its size), then a validation pass.
    Checkpoints go to out_dir at the end and every cfg.checkpoint_every
    epochs. A NaN/Inf loss or gradient aborts with NonFiniteError.
    """
    train_records = _resolve_records(train_manifest)
    val_records = _resolve_records(val_manifest)
    if not train_records or not val_records:
        raise ValueError("empty dataset: both manifests need at least one record")
    params = init_stage_params(cfg)
    x_train, t_train = _load_dataset(train_records, cfg.net)
    x_val, t_val = _load_dataset(val_records, cfg.net)

    rng = np.random.default_rng(cfg.seed)
    n = len(x_train)
    rows = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
        perm = rng.permutation(n)
        weighted = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            loss, grads = net.loss_and_gradients(params, x_train[idx], t_train[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"loss diverged: epoch {epoch}, batch at {lo}, loss {loss}")
            nesterov_step(params.weights, grads, params.velocity, lr, cfg.momentum)
            weighted += loss * len(idx)
        val_loss = _mean_loss(params, x_val, t_val, cfg.batch_size)
        rows.append(LossRow(epoch, weighted / n, val_loss, lr))
        if (out_dir and cfg.checkpoint_every
                and (epoch + 1) % cfg.checkpoint_every == 0):
            net.save_checkpoint(
                os.path.join(out_dir, f"checkpoint_ep{epoch + 1:04d}.wep"), params)
    if out_dir:
        net.save_checkpoint(os.path.join(out_dir, "checkpoint.wep"), params)
    return params, rows


def predict(params, img):
    """Saliency map for an RGB image at the image's own resolution.

    Forward pass on the standardized, resized input; the raw output is
    clamped to [0, 1], shaped into the network's square map and
    bilinearly upscaled back to the input size.
    """
    h, w = img.shape[:2]
    s = params.config.input_size
    resized = img if img.shape[:2] == (s, s) else resize_rgb(img, s, s)
    x = net.standardize_input(resized.transpose(2, 0, 1)).astype(np.float32)
    out = net.forward(params, x)
    side = params.config.map_side
    small = np.clip(out.astype(np.float64), 0.0, 1.0).reshape(side, side)
    return resize_bilinear(small, h, w)


def write_loss_csv(path, rows):
    """Loss log as CSV: epoch,train_loss,val_loss,lr (full float precision,
    so identical runs produce identical bytes)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in rows:
            writer.writerow([row.epoch, repr(float(row.train_loss)),
                             repr(float(row.val_loss)), repr(float(row.lr))])


def read_loss_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(LossRow(int(rec["epoch"]), float(rec["train_loss"]),
                                float(rec["val_loss"]), float(rec["lr"])))
    return rows
