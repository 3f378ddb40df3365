"""Dataset loading: manifests, PNG image/mask I/O, label recombination,
and the procedural synthetic pedestrian generator.

Masks on disk carry raw parsing labels (single-channel PNG); they are mapped
through a LabelRecombinationTable into the six-part legend at load time.
The default table groups an 18-label parsing convention; the grouping is a
best-effort reconstruction and can be overridden from a config file.
"""

from __future__ import annotations

import colorsys
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import (
    ARMS,
    BACKGROUND,
    HEAD,
    LEGS,
    PANTS,
    UPPER_CLOTHES,
    DataError,
    Image,
    RngStream,
    SemanticMask,
)

MANIFEST_HEADER = ["image_path", "mask_path", "identity", "camera", "clothes_id", "split"]
VALID_SPLITS = ("train", "gallery", "query_same", "query_cross")

# 18-label parsing convention (LIP-style ordering) -> six parts.
# 0 background, 1 hat, 2 hair, 3 glove, 4 sunglasses, 5 upper-clothes,
# 6 dress, 7 coat, 8 socks, 9 pants, 10 jumpsuit, 11 scarf, 12 skirt,
# 13 face, 14/15 arms, 16/17 legs.
DEFAULT_RECOMBINATION = {
    0: BACKGROUND,
    1: HEAD,
    2: HEAD,
    3: ARMS,
    4: HEAD,
    5: UPPER_CLOTHES,
    6: UPPER_CLOTHES,
    7: UPPER_CLOTHES,
    8: LEGS,
    9: PANTS,
    10: UPPER_CLOTHES,
    11: UPPER_CLOTHES,
    12: PANTS,
    13: HEAD,
    14: ARMS,
    15: ARMS,
    16: LEGS,
    17: LEGS,
}


@dataclass(frozen=True)
class LabelRecombinationTable:
    """Total map from raw parsing labels [0, K) to the six-part legend."""

    mapping: np.ndarray  # shape (K,), values in {0..5}

    def __post_init__(self):
        arr = np.asarray(self.mapping, dtype=np.int64)
        if arr.ndim != 1 or arr.size == 0:
            raise DataError("recombination table must be a non-empty vector")
        if arr.min() < 0 or arr.max() > 5:
            raise DataError("recombined labels must lie in {0..5}")
        object.__setattr__(self, "mapping", arr)

    @property
    def num_raw_labels(self):
        return self.mapping.size

    @classmethod
    def default(cls):
        arr = np.zeros(len(DEFAULT_RECOMBINATION), dtype=np.int64)
        for raw, part in DEFAULT_RECOMBINATION.items():
            arr[raw] = part
        return cls(arr)

    @classmethod
    def identity(cls):
        """Identity map on {0..5}; masks on disk already use the six parts."""
        return cls(np.arange(6))

    @classmethod
    def from_file(cls, path):
        """Parse a flat `raw_label = recombined_label` config file."""
        pairs = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected `raw = recombined`")
            left, right = line.split("=", 1)
            try:
                pairs[int(left)] = int(right)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-integer label") from exc
        if not pairs:
            raise DataError(f"{path}: empty recombination table")
        k = max(pairs) + 1
        missing = [r for r in range(k) if r not in pairs]
        if missing:
            raise DataError(f"{path}: raw labels without a mapping: {missing}")
        return cls(np.array([pairs[r] for r in range(k)], dtype=np.int64))


def recombine_labels(raw_mask, table: LabelRecombinationTable) -> SemanticMask:
    """Map every raw parsing label through the table."""
    raw = np.asarray(raw_mask)
    if raw.ndim != 2:
        raise DataError(f"raw mask must be H x W, got shape {raw.shape}")
    bad = (raw < 0) | (raw >= table.num_raw_labels)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(
            f"raw label {int(raw[r, c])} at ({int(r)}, {int(c)}) outside "
            f"[0, {table.num_raw_labels})"
        )
    return SemanticMask(table.mapping[raw.astype(np.int64)])


@dataclass(frozen=True)
class SampleRecord:
    image_path: Path
    mask_path: Path
    identity: str
    camera: str
    clothes_id: str
    split: str


@dataclass
class Dataset:
    """Immutable record list plus identity index; images load lazily."""

    records: list
    table: LabelRecombinationTable
    identity_index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.identity_index:
            index = {}
            for i, rec in enumerate(self.records):
                index.setdefault(rec.identity, []).append(i)
            self.identity_index = index

    def __len__(self):
        return len(self.records)

    def indices_for_split(self, split):
        return [i for i, rec in enumerate(self.records) if rec.split == split]

    def load_image(self, idx) -> Image:
        arr = np.asarray(PILImage.open(self.records[idx].image_path).convert("RGB"))
        return Image(arr.astype(np.float64).transpose(2, 0, 1) / 255.0)

    def load_mask(self, idx) -> SemanticMask:
        raw = np.asarray(PILImage.open(self.records[idx].mask_path))
        if raw.ndim != 2:
            raise DataError(f"{self.records[idx].mask_path}: mask PNG must be single-channel")
        return recombine_labels(raw, self.table)

    def load_sample(self, idx):
        return self.load_image(idx), self.load_mask(idx)


def load_dataset(manifest_path, table: LabelRecombinationTable) -> Dataset:
    """Read a manifest CSV; paths are resolved relative to the manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    records = []
    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return Dataset(records=[], table=table)
        if header != MANIFEST_HEADER:
            raise DataError(
                f"{manifest_path}:1: bad header {header!r}, "
                f"expected {MANIFEST_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise DataError(f"{manifest_path}:{lineno}: expected 6 fields, got {len(row)}")
            image_path, mask_path, identity, camera, clothes_id, split = row
            if split not in VALID_SPLITS:
                raise DataError(
                    f"{manifest_path}:{lineno}: split {split!r} not in {VALID_SPLITS}"
                )
            img = root / image_path
            msk = root / mask_path
            for p in (img, msk):
                if not p.exists():
                    raise FileNotFoundError(f"{manifest_path}:{lineno}: missing file {p}")
            records.append(SampleRecord(img, msk, identity, camera, clothes_id, split))
    return Dataset(records=records, table=table)


@dataclass
class SynthConfig:
    """Parameters of the procedural pedestrian generator."""

    out_dir: Path
    num_identities: int = 30
    outfits_per_identity: int = 3
    images_per_outfit: int = 6
    height: int = 64
    width: int = 32
    eval_identity_fraction: float = 1.0 / 3.0
    noise_sigma: float = 0.02


# raw labels written into generated mask PNGs (see DEFAULT_RECOMBINATION)
_RAW_FACE, _RAW_UPPER, _RAW_PANTS = 13, 5, 9
_RAW_LARM, _RAW_RARM, _RAW_LLEG, _RAW_RLEG = 14, 15, 16, 17

_SKIN = np.array([0.87, 0.72, 0.60])


def _draw_pedestrian(h, w, head_color, leg_color, upper_color, pants_color, rng):
    """Stacked-rectangle figure on a noise background; returns (rgb, raw mask)."""
    img = np.full((h, w, 3), 0.5)
    img += rng.normal(0.0, 0.08, size=(h, w, 3))
    raw = np.zeros((h, w), dtype=np.uint8)

    # whole-figure jitter, a few percent of each dimension
    dy = int(rng.integers(-max(1, h // 20), max(1, h // 20) + 1))
    dx = int(rng.integers(-max(1, w // 16), max(1, w // 16) + 1))

    def rect(r0, r1, c0, c1, color, label):
        r0 = int(np.clip(round(r0 * h) + dy, 0, h))
        r1 = int(np.clip(round(r1 * h) + dy, 0, h))
        c0 = int(np.clip(round(c0 * w) + dx, 0, w))
        c1 = int(np.clip(round(c1 * w) + dx, 0, w))
        img[r0:r1, c0:c1] = color
        raw[r0:r1, c0:c1] = label

    rect(0.03, 0.17, 0.34, 0.66, head_color, _RAW_FACE)
    rect(0.19, 0.50, 0.10, 0.26, _SKIN, _RAW_LARM)
    rect(0.19, 0.50, 0.74, 0.90, _SKIN, _RAW_RARM)
    rect(0.17, 0.50, 0.26, 0.74, upper_color, _RAW_UPPER)
    rect(0.50, 0.74, 0.28, 0.72, pants_color, _RAW_PANTS)
    rect(0.74, 0.97, 0.30, 0.47, leg_color, _RAW_LLEG)
    rect(0.74, 0.97, 0.53, 0.70, leg_color, _RAW_RLEG)

    img += rng.normal(0.0, 0.02, size=(h, w, 3))
    return np.clip(img, 0.0, 1.0), raw


def generate_synthetic(config: SynthConfig, rng: RngStream) -> Dataset:
    """Write a synthetic cloth-changing dataset (images, masks, manifest).

    Identity signal lives in head and leg colors; upper-clothes and pants
    colors are per-outfit nuisance. A held-out identity slice provides the
    gallery / query_same / query_cross splits: outfit 0 images alternate
    gallery and query_same, every other outfit goes to query_cross, so no
    query_cross record ever shares (identity, clothes_id) with the gallery.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)

    n_eval = max(1, int(round(config.num_identities * config.eval_identity_fraction)))
    n_eval = min(n_eval, config.num_identities)
    eval_ids = set(range(config.num_identities - n_eval, config.num_identities))

    # identity colors sit on an evenly spaced hue wheel (random rotation per
    # dataset) so no two identities collide in color space; outfit colors stay
    # uniform random because they are deliberate nuisance
    hue_offset = float(rng.uniform(0.0, 1.0))

    rows = []
    for ident in range(config.num_identities):
        hue = (hue_offset + ident / config.num_identities) % 1.0
        head_color = np.array(colorsys.hsv_to_rgb(hue, 0.9, 0.9))
        leg_color = np.array(colorsys.hsv_to_rgb((hue + 1.0 / 3.0) % 1.0, 0.9, 0.6))
        for outfit in range(config.outfits_per_identity):
            upper_color = rng.uniform(0.05, 0.95, size=3)
            pants_color = rng.uniform(0.05, 0.95, size=3)
            for k in range(config.images_per_outfit):
                img, raw = _draw_pedestrian(
                    config.height, config.width,
                    head_color, leg_color, upper_color, pants_color, rng,
                )
                stem = f"id{ident:04d}_c{outfit}_{k:03d}"
                img_rel = f"images/{stem}.png"
                msk_rel = f"masks/{stem}.png"
                PILImage.fromarray(
                    (img * 255.0).round().astype(np.uint8)
                ).save(out / img_rel)
                PILImage.fromarray(raw, mode="L").save(out / msk_rel)

                if ident not in eval_ids:
                    split = "train"
                    camera = f"cam{k % 3}"
                elif outfit == 0:
                    split = "gallery" if k % 2 == 0 else "query_same"
                    camera = "camC" if split == "gallery" else "camA"
                else:
                    split = "query_cross"
                    camera = "camB"
                rows.append(
                    [img_rel, msk_rel, f"id{ident:04d}", camera, f"c{outfit}", split]
                )

    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)

    return load_dataset(out / "manifest.csv", LabelRecombinationTable.default())
