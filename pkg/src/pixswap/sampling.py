"""Semantic-guided pixel sampling: swap upper-clothes and pants pixels
across a mini-batch using the aligned semantic masks.

A shuffled copy of the batch donates all pixels of one class into a flat
ordered bank; the bank is then written back over the class positions of the
original batch, image by image in raster order. Identity labels and masks
are untouched, so the generated samples keep their labels but wear other
pedestrians' clothes. Counts always match globally because bank and targets
are permutations of the same images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Batch, ConfigError, RngStream

SWAPPABLE_CLASSES = (2, 3)  # upper-clothes, pants


@dataclass(frozen=True)
class SamplingConfig:
    swap_upper: bool = True
    swap_pants: bool = True
    independent_permutations: bool = True
    bank_order: str = "raster"  # or "shuffled"

    def __post_init__(self):
        if not (self.swap_upper or self.swap_pants):
            raise ConfigError("at least one of swap_upper/swap_pants must be true")
        if self.bank_order not in ("raster", "shuffled"):
            raise ConfigError(f"unknown bank_order {self.bank_order!r}")


@dataclass(frozen=True)
class PixelBank:
    """Ordered class pixels gathered from a shuffled batch."""

    class_id: int
    pixels: np.ndarray  # (N, C)
    permutation: np.ndarray  # (B,) donor order

    @property
    def size(self):
        return self.pixels.shape[0]


def shuffle_batch(batch: Batch, rng: RngStream) -> np.ndarray:
    """Uniform random permutation of batch indices (the batch itself stays put)."""
    return rng.permutation(batch.size)


def build_bank(
    batch: Batch,
    permutation: np.ndarray,
    class_id: int,
    config: SamplingConfig,
    rng: RngStream | None = None,
) -> PixelBank:
    """Gather class pixels of images batch[perm[0]], batch[perm[1]], ... in
    raster order within each image; optionally shuffle the whole bank."""
    if class_id not in SWAPPABLE_CLASSES:
        raise ConfigError(f"only classes {SWAPPABLE_CLASSES} are swappable, got {class_id}")
    chunks = []
    for src in permutation:
        sel = batch.masks[src] == class_id
        # (C, n) -> (n, C), raster order from row-major nonzero
        chunks.append(batch.images[src][:, sel].T)
    pixels = (
        np.concatenate(chunks, axis=0)
        if chunks
        else np.empty((0, batch.images.shape[1]))
    )
    if config.bank_order == "shuffled" and pixels.shape[0] > 1:
        if rng is None:
            raise ConfigError("bank_order=shuffled requires an rng")
        pixels = pixels[rng.permutation(pixels.shape[0])]
    return PixelBank(class_id=class_id, pixels=pixels, permutation=np.asarray(permutation))


def apply_bank(batch: Batch, bank: PixelBank) -> Batch:
    """Overwrite the class positions of the batch with bank pixels in order."""
    counts = [int((m == bank.class_id).sum()) for m in batch.masks]
    total = sum(counts)
    if total != bank.size:
        raise RuntimeError(
            f"bank holds {bank.size} pixels but batch exposes {total} "
            f"class-{bank.class_id} positions (mask mutated between build and apply?)"
        )
    images = batch.images.copy()
    offset = 0
    for i, n in enumerate(counts):
        sel = batch.masks[i] == bank.class_id
        images[i][:, sel] = bank.pixels[offset : offset + n].T
        offset += n
    return Batch(images, batch.masks, batch.identities)


def generate(batch: Batch, config: SamplingConfig, rng: RngStream) -> Batch:
    """One generated sample per initial sample: swap upper clothes, then
    pants, each through its own shuffle -> bank -> substitution pass."""
    out = batch
    shared = None
    if not config.independent_permutations:
        shared = shuffle_batch(batch, rng)
    for class_id, enabled in ((2, config.swap_upper), (3, config.swap_pants)):
        if not enabled:
            continue
        perm = shared if shared is not None else shuffle_batch(batch, rng)
        bank = build_bank(out, perm, class_id, config, rng)
        out = apply_bank(out, bank)
    return out
