"""Training orchestration: PK batch -> joint geometric augmentation ->
pixel sampling -> forward on the concatenated initial+generated batch ->
three-term loss -> momentum SGD step, with ablation switches for the
pixel-sampling / consistency-loss / random-erasing comparison rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import losses as L
from .augment import GeoAugConfig, PKSpec, RandomErasingConfig, geo_augment, pk_batches, random_erase
from .core import Batch, ConfigError, Image, RngStream, SemanticMask, TrainingError
from .evaluation import build_protocol, evaluate_protocol, format_table
from .ingest import Dataset
from .model import (
    EmbeddingNet,
    LrSchedule,
    ModelConfig,
    TrainState,
    forward,
    backward,
    save_checkpoint,
    sgd_step,
)
from .sampling import SamplingConfig, generate
from .augment import resize_bilinear

ABLATION_ROWS = (
    ("baseline", (False, False, False)),
    ("ps", (True, False, False)),
    ("ps_mse", (True, True, False)),
    ("ps_mse_re", (True, True, True)),
)


@dataclass(frozen=True)
class AblationConfig:
    use_pixel_sampling: bool = True
    use_mse: bool = True
    use_random_erasing: bool = False

    def __post_init__(self):
        if self.use_mse and not self.use_pixel_sampling:
            raise ConfigError("the consistency loss needs generated twins: "
                              "use_mse requires use_pixel_sampling")


@dataclass
class RunConfig:
    ablation: AblationConfig = field(default_factory=AblationConfig)
    pk: PKSpec = field(default_factory=PKSpec)
    geo: GeoAugConfig = field(default_factory=GeoAugConfig)
    erasing: RandomErasingConfig = field(default_factory=RandomErasingConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    total_steps: int = 1000
    seed: int = 0
    eval_every: int = 0  # 0: evaluate only at the end
    lr: float = 3.5e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    # classification-only steps before the metric losses switch on; the
    # stand-in for a pretrained backbone, without which batch-hard triplet
    # collapses a randomly initialized net
    warmup_steps: int = 0


# flat key=value surface for config files and CLI overrides
_BOOL_KEYS = {
    "use_pixel_sampling", "use_mse", "use_random_erasing",
    "swap_upper", "swap_pants", "independent_permutations",
}
_INT_KEYS = {
    "total_steps", "seed", "eval_every", "pk_p", "pk_k",
    "geo_height", "geo_width", "crop_padding", "embed_dim", "warmup_steps",
}
_FLOAT_KEYS = {
    "lr", "momentum", "weight_decay", "flip_prob", "margin",
    "re_probability", "re_area_low", "re_area_high",
    "re_aspect_low", "re_aspect_high", "re_fill_value",
}
_STR_KEYS = {"bank_order", "mse_mode", "re_fill", "widths"}
KNOWN_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def _parse_value(key, raw):
    raw = raw.strip()
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    return raw


def config_from_items(items: dict) -> RunConfig:
    """Build a RunConfig from flat key=value pairs (file and/or overrides)."""
    vals = {}
    for key, raw in items.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        vals[key] = _parse_value(key, raw) if isinstance(raw, str) else raw

    def take(key, default):
        return vals[key] if key in vals else default

    widths = take("widths", "8,16,32")
    if isinstance(widths, str):
        widths = tuple(int(x) for x in widths.split(","))
    return RunConfig(
        ablation=AblationConfig(
            use_pixel_sampling=take("use_pixel_sampling", True),
            use_mse=take("use_mse", True),
            use_random_erasing=take("use_random_erasing", False),
        ),
        pk=PKSpec(take("pk_p", 16), take("pk_k", 4)),
        geo=GeoAugConfig(
            height=take("geo_height", 256),
            width=take("geo_width", 128),
            crop_padding=take("crop_padding", 10),
            flip_prob=take("flip_prob", 0.5),
        ),
        erasing=RandomErasingConfig(
            probability=take("re_probability", 0.5),
            area_low=take("re_area_low", 0.02),
            area_high=take("re_area_high", 0.4),
            aspect_low=take("re_aspect_low", 0.3),
            aspect_high=take("re_aspect_high", 1.0 / 0.3),
            fill=take("re_fill", "random"),
            fill_value=take("re_fill_value", 0.0),
        ),
        sampling=SamplingConfig(
            swap_upper=take("swap_upper", True),
            swap_pants=take("swap_pants", True),
            independent_permutations=take("independent_permutations", True),
            bank_order=take("bank_order", "raster"),
        ),
        loss=L.LossConfig(margin=take("margin", 0.3), mse_mode=take("mse_mode", "l2_norm")),
        model=ModelConfig(embed_dim=take("embed_dim", 64), widths=widths),
        total_steps=take("total_steps", 1000),
        seed=take("seed", 0),
        eval_every=take("eval_every", 0),
        lr=take("lr", 3.5e-3),
        momentum=take("momentum", 0.9),
        weight_decay=take("weight_decay", 0.0),
        warmup_steps=take("warmup_steps", 0),
    )


def load_config_file(path) -> dict:
    items = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, raw = line.split("=", 1)
        items[key.strip()] = raw.strip()
    return items


def train_step(state: TrainState, batch: Batch, cfg: RunConfig, rng: RngStream,
               warmup: bool = False):
    """One optimizer step on an already geo-augmented batch.

    During warmup only the classification term is applied."""
    b = batch.size
    if cfg.ablation.use_pixel_sampling:
        generated = generate(batch, cfg.sampling, rng.split())
        images = np.concatenate([batch.images, generated.images])
        labels = np.concatenate([batch.identities, generated.identities])
    else:
        images = batch.images
        labels = batch.identities

    if cfg.ablation.use_random_erasing:
        re_rng = rng.split()
        images = np.stack(
            [random_erase(Image(im), cfg.erasing, re_rng).data for im in images]
        )

    emb, logits, cache = forward(state.net, images)
    ce_value, d_logits = L.cross_entropy(logits, labels)
    trip_value, d_emb, hp, hn = L.batch_hard_triplet(emb, labels, cfg.loss)
    mse_value = 0.0
    if warmup:
        trip_value = 0.0
        d_emb = np.zeros_like(d_emb)
        hp, hn = [], []
    elif cfg.ablation.use_mse:
        mse_value, g_f, g_fp = L.mse_consistency(emb[:b], emb[b:], cfg.loss)
        d_emb = d_emb.copy()
        d_emb[:b] += g_f
        d_emb[b:] += g_fp

    report = L.total_loss(mse_value, ce_value, trip_value, hp, hn)
    if not np.isfinite(report.total):
        raise TrainingError(f"non-finite loss at step {state.step}: {report}")
    grads = backward(state.net, cache, d_emb, d_logits)
    state = sgd_step(state, grads)
    return state, report


class _TrainCache:
    """Preloaded train images/masks; tiny synthetic sets fit in memory."""

    def __init__(self, dataset: Dataset, indices):
        self.images = {}
        self.masks = {}
        for i in indices:
            img, mask = dataset.load_sample(i)
            self.images[i] = img
            self.masks[i] = mask


def _assemble_batch(cache, indices, class_of, cfg, rng):
    samples = []
    for i in indices:
        img, mask = geo_augment(cache.images[i], cache.masks[i], cfg.geo, rng)
        samples.append((img, mask, class_of[i]))
    return Batch.from_samples(samples)


def extract_embeddings(net: EmbeddingNet, dataset: Dataset, indices, geo: GeoAugConfig,
                       chunk=64):
    """Deterministic eval-time embeddings: resize only, no random transforms."""
    out = {}
    for start in range(0, len(indices), chunk):
        part = indices[start : start + chunk]
        imgs = np.stack(
            [
                resize_bilinear(dataset.load_image(i).data, geo.height, geo.width)
                for i in part
            ]
        )
        emb, _, _ = forward(net, imgs)
        for i, e in zip(part, emb):
            out[i] = e
    return out


def evaluate_model(net: EmbeddingNet, dataset: Dataset, geo: GeoAugConfig):
    """Both protocols on the current parameters; returns mode -> EvalResult."""
    protos = {
        "cross_clothes": build_protocol(dataset, "cross_clothes"),
        "same_clothes": build_protocol(dataset, "same_clothes"),
    }
    needed = sorted(
        {i for p in protos.values() for i in p.query_indices + p.gallery_indices}
    )
    embeddings = extract_embeddings(net, dataset, needed, geo)
    return {
        mode: evaluate_protocol(embeddings, dataset, proto)
        for mode, proto in protos.items()
    }, protos


def run_experiment(cfg: RunConfig, dataset: Dataset, out_dir, quiet=False):
    """Train for cfg.total_steps, evaluate both protocols, write logs,
    result JSONs, and a final checkpoint. Returns mode -> EvalResult."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_indices = dataset.indices_for_split("train")
    identities = sorted({dataset.records[i].identity for i in train_indices})
    class_of = {
        i: identities.index(dataset.records[i].identity) for i in train_indices
    }
    identity_to_indices = {}
    for i in train_indices:
        identity_to_indices.setdefault(dataset.records[i].identity, []).append(i)

    root = RngStream(cfg.seed)
    init_rng, sampler_rng, aug_rng, step_rng = root.split(4)
    net = EmbeddingNet(cfg.model, num_classes=len(identities), rng=init_rng)
    schedule = LrSchedule(base=cfg.lr, total_steps=max(cfg.total_steps, 1))
    state = TrainState(net=net, schedule=schedule, momentum=cfg.momentum,
                       weight_decay=cfg.weight_decay)

    cache = _TrainCache(dataset, train_indices)
    batches = pk_batches(identity_to_indices, cfg.pk, sampler_rng)

    log_path = out_dir / "train_log.csv"
    with open(log_path, "w", newline="") as log_fh:
        log = csv.writer(log_fh)
        log.writerow(["step", "lr", "mse", "ce", "triplet", "total"])
        for step in range(cfg.total_steps):
            batch = _assemble_batch(cache, next(batches), class_of, cfg, aug_rng)
            lr = schedule.at(state.step)
            state, report = train_step(state, batch, cfg, step_rng.split(),
                                       warmup=step < cfg.warmup_steps)
            log.writerow([
                step, f"{lr:.6g}", f"{report.mse:.6f}", f"{report.ce:.6f}",
                f"{report.triplet:.6f}", f"{report.total:.6f}",
            ])
            if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                results, _ = evaluate_model(net, dataset, cfg.geo)
                if not quiet:
                    print(f"step {step + 1}")
                    print(format_table(results))

    results, protos = evaluate_model(net, dataset, cfg.geo)
    for mode, res in results.items():
        proto = protos[mode]
        path = out_dir / f"results_{mode}.json"
        path.write_text(
            res.to_json(mode, len(proto.query_indices), len(proto.gallery_indices)) + "\n"
        )
    save_checkpoint(out_dir / "checkpoint.bin", net)
    if not quiet:
        print(format_table(results))
    return results


def run_ablation(cfg: RunConfig, dataset: Dataset, out_dir, rows=ABLATION_ROWS,
                 quiet=False):
    """Run every ablation row with the same seed; one subdirectory per row."""
    out_dir = Path(out_dir)
    summary = {}
    for name, (ps, mse, re_) in rows:
        row_cfg = RunConfig(
            ablation=AblationConfig(ps, mse, re_),
            pk=cfg.pk, geo=cfg.geo, erasing=cfg.erasing, sampling=cfg.sampling,
            loss=cfg.loss, model=cfg.model, total_steps=cfg.total_steps,
            seed=cfg.seed, eval_every=cfg.eval_every, lr=cfg.lr,
            momentum=cfg.momentum, weight_decay=cfg.weight_decay,
            warmup_steps=cfg.warmup_steps,
        )
        if not quiet:
            print(f"== ablation row: {name} ==")
        results = run_experiment(row_cfg, dataset, out_dir / name, quiet=quiet)
        summary[name] = {
            mode: {"rank1": r.rank1, "mAP": r.mean_ap} for mode, r in results.items()
        }
    (out_dir / "ablation_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary
