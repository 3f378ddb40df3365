"""Minimal deterministic image/mask/batch types and explicit RNG streams.

Images are channel-major float arrays with values in [0, 1]. Semantic masks
are integer label maps over the six recombined body parts. All types are
immutable values after construction; every stochastic operation takes an
explicit RngStream so runs are replayable bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NUM_PARTS = 6
BACKGROUND, HEAD, UPPER_CLOTHES, PANTS, ARMS, LEGS = range(NUM_PARTS)

PART_NAMES = {
    BACKGROUND: "background",
    HEAD: "head",
    UPPER_CLOTHES: "upper-clothes",
    PANTS: "pants",
    ARMS: "arms",
    LEGS: "legs",
}


class DataError(Exception):
    """Malformed or inconsistent input data (bad labels, bad manifest rows)."""


class ConfigError(Exception):
    """Invalid configuration or precondition violation at setup time."""


class TrainingError(Exception):
    """Non-finite values or other failures during optimization."""


class RngStream:
    """Named deterministic random stream, splittable, never shared.

    Identical seed and call sequence yield identical draws. Child streams
    obtained via split() are independent and themselves deterministic.
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, n=1):
        children = [RngStream(s) for s in self._seq.spawn(n)]
        return children[0] if n == 1 else children

    # thin delegates for the draws we actually use
    def integers(self, *args, **kwargs):
        return self.gen.integers(*args, **kwargs)

    def random(self, *args, **kwargs):
        return self.gen.random(*args, **kwargs)

    def uniform(self, *args, **kwargs):
        return self.gen.uniform(*args, **kwargs)

    def normal(self, *args, **kwargs):
        return self.gen.normal(*args, **kwargs)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, *args, **kwargs):
        return self.gen.choice(*args, **kwargs)


@dataclass(frozen=True)
class Image:
    """C x H x W pixel tensor, channel-major, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise DataError(f"image must be C x H x W, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class SemanticMask:
    """H x W integer label map over the six-part legend."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise DataError(f"mask must be H x W, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= NUM_PARTS):
            raise DataError(
                f"mask labels must lie in [0, {NUM_PARTS}), "
                f"got range [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "labels", arr.astype(np.uint8))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]


@dataclass(frozen=True)
class Batch:
    """B aligned images + masks + identity labels, stacked for vector ops.

    images: (B, C, H, W) float; masks: (B, H, W) uint8; identities: (B,) int.
    """

    images: np.ndarray
    masks: np.ndarray
    identities: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        masks = np.asarray(self.masks, dtype=np.uint8)
        ids = np.asarray(self.identities)
        if images.ndim != 4:
            raise DataError(f"batch images must be (B,C,H,W), got {images.shape}")
        if masks.shape != (images.shape[0], images.shape[2], images.shape[3]):
            raise DataError(
                f"batch masks {masks.shape} do not align with images {images.shape}"
            )
        if ids.shape != (images.shape[0],):
            raise DataError(f"identities length {ids.shape} != batch size")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "identities", ids)

    @property
    def size(self):
        return self.images.shape[0]

    @classmethod
    def from_samples(cls, samples):
        """Stack an iterable of (Image, SemanticMask, identity) triples."""
        imgs, masks, ids = [], [], []
        for img, mask, ident in samples:
            imgs.append(img.data)
            masks.append(mask.labels)
            ids.append(ident)
        return cls(np.stack(imgs), np.stack(masks), np.asarray(ids))


def pixel_at(img: Image, row: int, col: int) -> np.ndarray:
    """Channel vector of the pixel at (row, col)."""
    if not (0 <= row < img.height and 0 <= col < img.width):
        raise IndexError(
            f"pixel ({row}, {col}) out of bounds for {img.height}x{img.width}"
        )
    return img.data[:, row, col].copy()


def raster_positions(mask: SemanticMask, class_id: int):
    """(row, col) positions carrying class_id, in row-major raster order."""
    if not (0 <= class_id < NUM_PARTS):
        raise ValueError(f"class_id must be in [0, {NUM_PARTS}), got {class_id}")
    rows, cols = np.nonzero(mask.labels == class_id)
    return list(zip(rows.tolist(), cols.tolist()))
