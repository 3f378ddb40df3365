"""Geometric augmentation applied jointly to image and mask, the random
erasing comparison augmentation, and the identity-balanced PK batch sampler.

Images are resized bilinearly, masks with nearest neighbor on the same
half-pixel-center grid so labels stay aligned with their pixels through
resize, pad-and-crop, and flip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, Image, RngStream, SemanticMask


@dataclass(frozen=True)
class GeoAugConfig:
    height: int = 256
    width: int = 128
    crop_padding: int = 10
    flip_prob: float = 0.5

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("target size must be positive")


@dataclass(frozen=True)
class RandomErasingConfig:
    probability: float = 0.5
    area_low: float = 0.02
    area_high: float = 0.4
    aspect_low: float = 0.3
    aspect_high: float = 1.0 / 0.3
    fill: str = "random"  # "random" (per-pixel) or "constant"
    fill_value: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.area_low <= self.area_high < 1.0):
            raise ConfigError("need 0 < area_low <= area_high < 1")
        if self.fill not in ("random", "constant"):
            raise ConfigError(f"unknown fill mode {self.fill!r}")


@dataclass(frozen=True)
class PKSpec:
    num_identities: int = 16  # P
    instances_per_identity: int = 4  # K

    @property
    def batch_size(self):
        return self.num_identities * self.instances_per_identity


def _resize_coords(n_out, n_in):
    """Half-pixel-center source coordinates for resizing n_in -> n_out."""
    scale = n_in / n_out
    return (np.arange(n_out) + 0.5) * scale - 0.5


def resize_bilinear(data: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) array."""
    _, h, w = data.shape
    ys = np.clip(_resize_coords(height, h), 0, h - 1)
    xs = np.clip(_resize_coords(width, w), 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = data[:, y0][:, :, x0] * (1 - wx) + data[:, y0][:, :, x1] * wx
    bot = data[:, y1][:, :, x0] * (1 - wx) + data[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(labels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resize of an (H, W) label map (invents no labels)."""
    h, w = labels.shape
    ys = np.clip(np.rint(_resize_coords(height, h)).astype(int), 0, h - 1)
    xs = np.clip(np.rint(_resize_coords(width, w)).astype(int), 0, w - 1)
    return labels[ys][:, xs]


def geo_augment(
    img: Image,
    mask: SemanticMask,
    cfg: GeoAugConfig,
    rng: RngStream,
    crop_offset=None,
    flip=None,
):
    """Resize, pad-and-random-crop, and flip image and mask identically.

    crop_offset/flip override the random draws (used by tests and eval)."""
    data = resize_bilinear(img.data, cfg.height, cfg.width)
    labels = resize_nearest(mask.labels, cfg.height, cfg.width)

    p = cfg.crop_padding
    if p > 0:
        data = np.pad(data, ((0, 0), (p, p), (p, p)))
        labels = np.pad(labels, ((p, p), (p, p)))
    if crop_offset is None:
        crop_offset = (int(rng.integers(0, 2 * p + 1)), int(rng.integers(0, 2 * p + 1)))
    r0, c0 = crop_offset
    data = data[:, r0 : r0 + cfg.height, c0 : c0 + cfg.width]
    labels = labels[r0 : r0 + cfg.height, c0 : c0 + cfg.width]

    if flip is None:
        flip = bool(rng.random() < cfg.flip_prob)
    if flip:
        data = data[:, :, ::-1]
        labels = labels[:, ::-1]
    return Image(np.ascontiguousarray(data)), SemanticMask(np.ascontiguousarray(labels))


def random_erase(img: Image, cfg: RandomErasingConfig, rng: RngStream) -> Image:
    """Overwrite one random rectangle with probability cfg.probability."""
    if rng.random() >= cfg.probability:
        return img
    c, h, w = img.data.shape
    area = h * w
    for _ in range(100):
        target = rng.uniform(cfg.area_low, cfg.area_high) * area
        aspect = math.exp(rng.uniform(math.log(cfg.aspect_low), math.log(cfg.aspect_high)))
        eh = int(round(math.sqrt(target * aspect)))
        ew = int(round(math.sqrt(target / aspect)))
        if eh < 1 or ew < 1 or eh > h or ew > w:
            continue
        # integer rounding can nudge the realized rectangle out of the
        # configured ranges; reject on the measured ratios, not the draws
        if not (cfg.area_low <= eh * ew / area <= cfg.area_high):
            continue
        if not (cfg.aspect_low <= eh / ew <= cfg.aspect_high):
            continue
        r0 = int(rng.integers(0, h - eh + 1))
        c0 = int(rng.integers(0, w - ew + 1))
        data = img.data.copy()
        if cfg.fill == "random":
            data[:, r0 : r0 + eh, c0 : c0 + ew] = rng.random((c, eh, ew))
        else:
            data[:, r0 : r0 + eh, c0 : c0 + ew] = cfg.fill_value
        return Image(data)
    return img


def pk_batches(identity_to_indices: dict, spec: PKSpec, rng: RngStream):
    """Endless stream of PK index batches: P distinct identities, K instances
    each; identities with fewer than K images are sampled with replacement."""
    identities = sorted(identity_to_indices)
    if len(identities) < spec.num_identities:
        raise ConfigError(
            f"PK sampling needs >= {spec.num_identities} identities, "
            f"got {len(identities)}"
        )
    while True:
        chosen = rng.choice(len(identities), size=spec.num_identities, replace=False)
        batch = []
        for ident_pos in chosen:
            pool = identity_to_indices[identities[ident_pos]]
            k = spec.instances_per_identity
            if len(pool) >= k:
                picks = rng.choice(len(pool), size=k, replace=False)
            else:
                picks = rng.choice(len(pool), size=k, replace=True)
            batch.extend(pool[i] for i in picks)
        yield batch
