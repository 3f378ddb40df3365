"""Toy differentiable embedding network with exact analytic gradients.

Three blocks of (3x3 conv, ReLU, 2x2 average pool), global average pooling,
a linear projection to the embedding, and a bias-free linear classifier on
top of the embedding. Small enough that every parameter gradient can be
verified against central finite differences, deep enough to separate the
synthetic identities. Plain numpy, no autodiff framework.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, RngStream, TrainingError

CHECKPOINT_MAGIC = b"PXSW"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    widths: tuple = (8, 16, 32)
    embed_dim: int = 64
    # classifier logits are scaled cosines (embeddings are unit norm); without
    # the scale the softmax stays near-uniform and cross-entropy barely moves
    logit_scale: float = 16.0


class EmbeddingNet:
    """Parameter container; forward/backward are free functions on it."""

    def __init__(self, config: ModelConfig, num_classes: int, rng: RngStream):
        self.config = config
        self.num_classes = num_classes
        self.params = {}
        self.frozen = frozenset()
        c_in = config.in_channels
        for i, c_out in enumerate(config.widths):
            fan_in = c_in * 9
            self.params[f"conv{i}_w"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, 3, 3)
            )
            self.params[f"conv{i}_b"] = np.zeros(c_out)
            c_in = c_out
        self.params["embed_w"] = rng.normal(
            0.0, np.sqrt(1.0 / c_in), size=(config.embed_dim, c_in)
        )
        self.params["embed_b"] = np.zeros(config.embed_dim)
        self.params["cls_w"] = rng.normal(
            0.0, np.sqrt(1.0 / config.embed_dim), size=(num_classes, config.embed_dim)
        )

    @property
    def embed_dim(self):
        return self.config.embed_dim


def _im2col(x):
    """(N, C, H, W) -> column matrix (N*H*W, C*9) of 3x3 same-pad patches."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    # (N, C, H, W, 3, 3) -> (N, H, W, C, 3, 3) -> flat rows
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h * w, c * 9
    )


def _conv3x3_forward(x, w, b):
    n, c, h, width = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    out = cols @ w.reshape(o, c * 9).T + b
    return out.reshape(n, h, width, o).transpose(0, 3, 1, 2), cols


def _conv3x3_backward(x_shape, cols, w, dout):
    n, c, h, width = x_shape
    o = w.shape[0]
    dflat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(n * h * width, o)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(o, c * 9)).reshape(n, h, width, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, width + 2))
    for dy in range(3):
        for dx in range(3):
            dxp[:, :, dy : dy + h, dx : dx + width] += dcols[:, :, :, :, dy, dx].transpose(
                0, 3, 1, 2
            )
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _avgpool2_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :, : 2 * h2, : 2 * w2]
    return xc.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))


def _avgpool2_backward(x_shape, dout):
    n, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    dx = np.zeros(x_shape)
    spread = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0
    dx[:, :, : 2 * h2, : 2 * w2] = spread
    return dx


def forward(net: EmbeddingNet, images: np.ndarray):
    """Returns (embeddings (N, D), logits (N, num_classes), cache)."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != net.config.in_channels:
        raise ValueError(f"expected (N, {net.config.in_channels}, H, W), got {x.shape}")
    # center [0,1] pixels; all-positive inputs drive first-layer ReLUs dead
    x = x - 0.5
    cache = {"in_shapes": [], "cols": [], "relu_masks": [], "pool_shapes": []}
    for i in range(len(net.config.widths)):
        cache["in_shapes"].append(x.shape)
        z, cols = _conv3x3_forward(x, net.params[f"conv{i}_w"], net.params[f"conv{i}_b"])
        cache["cols"].append(cols)
        mask = z > 0
        a = z * mask
        cache["relu_masks"].append(mask)
        cache["pool_shapes"].append(a.shape)
        x = _avgpool2_forward(a)
    cache["pre_gap"] = x
    h = x.mean(axis=(2, 3))  # global average pool -> (N, C_last)
    cache["gap"] = h
    raw = h @ net.params["embed_w"].T + net.params["embed_b"]
    # per-sample L2 normalization: parameter-free stand-in for a BN neck,
    # pins the feature scale so the triplet loss cannot collapse it
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    safe = np.maximum(norms, 1e-12)
    emb = raw / safe
    cache["raw_emb"] = raw
    cache["emb_norms"] = safe
    cache["emb"] = emb
    logits = net.config.logit_scale * (emb @ net.params["cls_w"].T)
    return emb, logits, cache


def backward(net: EmbeddingNet, cache, d_emb, d_logits):
    """Analytic parameter gradients given upstream gradients on the
    embeddings and on the logits. Frozen parameter groups get zero."""
    grads = {}
    scale = net.config.logit_scale
    grads["cls_w"] = scale * (d_logits.T @ cache["emb"])
    d_norm = d_emb + scale * (d_logits @ net.params["cls_w"])
    # back through the L2 normalization: project out the radial component
    unit = cache["emb"]
    radial = np.sum(d_norm * unit, axis=1, keepdims=True)
    d_raw = (d_norm - radial * unit) / cache["emb_norms"]
    degenerate = cache["emb_norms"][:, 0] <= 1e-12
    if degenerate.any():
        d_raw[degenerate] = d_norm[degenerate]  # identity pass at the origin
    grads["embed_w"] = d_raw.T @ cache["gap"]
    grads["embed_b"] = d_raw.sum(axis=0)
    dh = d_raw @ net.params["embed_w"]

    n, c, ph, pw = cache["pre_gap"].shape
    dx = np.broadcast_to(dh[:, :, None, None] / (ph * pw), cache["pre_gap"].shape)
    for i in reversed(range(len(net.config.widths))):
        da = _avgpool2_backward(cache["pool_shapes"][i], dx)
        dz = da * cache["relu_masks"][i]
        dx, dw, db = _conv3x3_backward(
            cache["in_shapes"][i], cache["cols"][i], net.params[f"conv{i}_w"], dz
        )
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    for name in net.frozen:
        grads[name] = np.zeros_like(net.params[name])
    return grads


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: base rate, multiplied by gamma at the given fractions of
    the total step budget."""

    base: float = 3.5e-3
    total_steps: int = 1000
    milestones: tuple = (0.6, 0.8)
    gamma: float = 0.1

    def __post_init__(self):
        if self.base <= 0:
            raise ConfigError("learning rate must be positive")

    def at(self, step: int) -> float:
        lr = self.base
        for frac in self.milestones:
            if step >= frac * self.total_steps:
                lr *= self.gamma
        return lr


@dataclass
class TrainState:
    net: EmbeddingNet
    schedule: LrSchedule
    momentum: float = 0.9
    weight_decay: float = 0.0
    step: int = 0
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.velocity:
            self.velocity = {k: np.zeros_like(v) for k, v in self.net.params.items()}


def sgd_step(state: TrainState, grads) -> TrainState:
    """Momentum SGD update; increments the step counter."""
    lr = state.schedule.at(state.step)
    for name, param in state.net.params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if state.weight_decay:
            g = g + state.weight_decay * param
        v = state.momentum * state.velocity[name] + g
        state.velocity[name] = v
        param -= lr * v
        if not np.all(np.isfinite(param)):
            raise TrainingError(f"non-finite values in parameter {name!r} after update")
    state.step += 1
    return state


def save_checkpoint(path, net: EmbeddingNet):
    """Versioned binary blob: magic, version, then named float64 tensors."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(net.params)))
        for name in sorted(net.params):
            arr = np.ascontiguousarray(net.params[name], dtype="<f8")
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns the parameter dict stored by save_checkpoint."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise TrainingError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise TrainingError(f"{path}: unsupported checkpoint version {version}")
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if shape else 1
            params[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).copy()
        return params
