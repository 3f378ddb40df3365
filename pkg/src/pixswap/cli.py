"""Command-line entry point.

Subcommands: gen-synth, preview-aug, train, eval, check-grad, ablate.
Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/training error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import trainer as T
from .core import Batch, ConfigError, DataError, RngStream, TrainingError
from .evaluation import ProtocolError, format_table
from .gradcheck import run_checks
from .ingest import LabelRecombinationTable, SynthConfig, generate_synthetic, load_dataset
from .model import EmbeddingNet, ModelConfig, load_checkpoint
from .sampling import SamplingConfig, generate
from .trainer import evaluate_model

# preview colors for the six part labels
_PART_COLORS = np.array(
    [
        [0, 0, 0],        # background
        [255, 220, 80],   # head
        [220, 60, 60],    # upper clothes
        [60, 90, 220],    # pants
        [240, 170, 140],  # arms
        [90, 200, 110],   # legs
    ],
    dtype=np.uint8,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(prog="pixswap", description=__doc__)
    parser.add_argument("--workdir", default=".", help="root for relative paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--ids", type=int, default=30)
    p.add_argument("--outfits", type=int, default=3)
    p.add_argument("--per-outfit", type=int, default=6)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("preview-aug", help="dump original/mask/generated triptychs")
    p.add_argument("--data", required=True, help="dataset directory (with manifest.csv)")
    p.add_argument("--out", default="preview")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    for name in ("train", "ablate"):
        p = sub.add_parser(name, help=f"{name} on a dataset")
        p.add_argument("--data", required=True)
        p.add_argument("--out", default=name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("overrides", nargs="*", metavar="key=value")

    p = sub.add_parser("eval", help="evaluate a checkpoint on both protocols")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="directory for result JSONs")
    p.add_argument("--height", type=int, default=None, help="model input height")
    p.add_argument("--width", type=int, default=None, help="model input width")

    p = sub.add_parser("check-grad", help="finite-difference gradient check")
    p.add_argument("--configs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_run_config(args):
    items = T.load_config_file(args.config) if args.config else {}
    for ov in args.overrides:
        if "=" not in ov:
            raise _UsageError(f"override {ov!r} is not key=value")
        key, raw = ov.split("=", 1)
        items[key.strip()] = raw.strip()
    cfg = T.config_from_items(items)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _open_dataset(path):
    return load_dataset(Path(path) / "manifest.csv", LabelRecombinationTable.default())


def _cmd_gen_synth(args):
    cfg = SynthConfig(
        out_dir=Path(args.out),
        num_identities=args.ids,
        outfits_per_identity=args.outfits,
        images_per_outfit=args.per_outfit,
        height=args.height,
        width=args.width,
    )
    dataset = generate_synthetic(cfg, RngStream(args.seed))
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def _cmd_preview_aug(args):
    dataset = _open_dataset(args.data)
    rng = RngStream(args.seed)
    indices = dataset.indices_for_split("train") or list(range(len(dataset)))
    indices = indices[: args.n]
    if not indices:
        raise DataError("dataset has no samples to preview")
    batch = Batch.from_samples(
        [(*dataset.load_sample(i), k) for k, i in enumerate(indices)]
    )
    generated = generate(batch, SamplingConfig(), rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(batch.size):
        orig = (batch.images[k].transpose(1, 2, 0) * 255).round().astype(np.uint8)
        mask = _PART_COLORS[batch.masks[k]]
        gen = (generated.images[k].transpose(1, 2, 0) * 255).round().astype(np.uint8)
        gap = np.full((orig.shape[0], 2, 3), 255, dtype=np.uint8)
        strip = np.concatenate([orig, gap, mask, gap, gen], axis=1)
        PILImage.fromarray(strip).save(out / f"triptych_{k:03d}.png")
    print(f"wrote {batch.size} triptychs to {out}")
    return 0


def _cmd_train(args):
    cfg = _load_run_config(args)
    dataset = _open_dataset(args.data)
    T.run_experiment(cfg, dataset, args.out)
    return 0


def _cmd_ablate(args):
    cfg = _load_run_config(args)
    dataset = _open_dataset(args.data)
    T.run_ablation(cfg, dataset, args.out)
    return 0


def _cmd_eval(args):
    dataset = _open_dataset(args.data)
    params = load_checkpoint(args.checkpoint)
    widths = []
    i = 0
    while f"conv{i}_w" in params:
        widths.append(params[f"conv{i}_w"].shape[0])
        i += 1
    cfg = ModelConfig(widths=tuple(widths), embed_dim=params["embed_w"].shape[0])
    net = EmbeddingNet(cfg, num_classes=params["cls_w"].shape[0], rng=RngStream(0))
    net.params = params
    sample = dataset.load_image(0)
    geo_h = args.height or sample.height
    geo_w = args.width or sample.width
    from .augment import GeoAugConfig

    results, protos = evaluate_model(net, dataset, GeoAugConfig(height=geo_h, width=geo_w))
    print(format_table(results))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for mode, res in results.items():
            proto = protos[mode]
            (out / f"results_{mode}.json").write_text(
                res.to_json(mode, len(proto.query_indices), len(proto.gallery_indices))
                + "\n"
            )
    return 0


def _cmd_check_grad(args):
    errors = run_checks(num_configs=args.configs, start_seed=args.seed, verbose=True)
    worst = max(errors)
    print(f"worst max relative gradient error: {worst:.3e}")
    if worst >= 1e-3:
        raise TrainingError("gradient check failed")
    return 0


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "preview-aug": _cmd_preview_aug,
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "eval": _cmd_eval,
    "check-grad": _cmd_check_grad,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    workdir = Path(args.workdir)
    if args.workdir != ".":
        # resolve path-like arguments against the workdir
        for attr in ("out", "data", "config", "checkpoint"):
            value = getattr(args, attr, None)
            if value is not None and not Path(value).is_absolute():
                setattr(args, attr, str(workdir / value))
    try:
        return _COMMANDS[args.command](args)
    except (_UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, ProtocolError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
