"""Command-line entry point.

Commands: synth, train, eval, embed, gradcheck. Every run is controlled
by a JSON run configuration (see DEFAULTS for the documented key set);
--preset picks a named base, --config overlays a file, and individual
flags overlay last. Unknown keys are rejected.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .augment import AugmentConfig
from .backbone import BackboneConfig
from .checks import run_gradcheck_suite
from .consensus import ConsensusConfig, ConsensusNet
from .data import (SynthConfig, export_split, generate_synthetic,
                   label_mapping, load_directory, load_flat_directory)
from .errors import (CheckpointError, ConfigError, ContractError, DataLoadError,
                     NumericError)
from .metrics import (evaluate, extract_gallery, save_embeddings,
                      save_per_query_ap, self_retrieval_report)
from .rng import Rng
from .train import TrainConfig, fit, load_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

DEFAULTS = {
    "seed": 0,
    "scales": [[64, 32], [48, 24]],
    "pooling_assignment": None,      # null -> largest scale average, others max
    "backbone": {
        "num_blocks": 4,
        "factors_per_block": 4,
        "stage_plan": [[2, 16, 1], [1, 32, 2], [1, 64, 2]],
        "fm_kind": "conv_bottleneck",
        "mode": "full",
        "feature_dim": 128,
    },
    "train": {
        "lr": 0.0003,
        "beta1": 0.5,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 16,
        "epochs": 80,
        "checkpoint_every": 10,
        "single_thread": False,
        "lr_decay_every": None,
        "lr_decay_factor": 0.1,
    },
    "augment": {
        "crop_padding": 8,
        "erase_probability": 0.5,
        "erase_area": [0.02, 0.4],
        "erase_aspect": [0.3, 3.33],
        "flip_probability": 0.5,
        "brightness": 0.2,
        "contrast": 0.2,
        "saturation": 0.2,
        "pca_sigma": 0.1,
    },
    "synth": {
        "n_id": 8,
        "cameras": 2,
        "images_per_id_per_camera": 10,
        "base_hw": [64, 32],
        "color_shift": 0.1,
        "illumination": 0.25,
        "pose_jitter": 0.3,
        "background_clutter": 0.3,
        "occlusion_prob": 0.15,
        "query_camera": 1,
    },
}

_PAPER_SCALES = [[384, 192], [256, 128]]

PRESETS = {
    "toy": {},
    "paper-market": {
        "scales": _PAPER_SCALES,
        "backbone": {
            "num_blocks": 16,
            "factors_per_block": 32,
            "stage_plan": [[3, 64, 1], [4, 128, 2], [6, 256, 2], [3, 512, 2]],
            "feature_dim": 1024,
        },
        "train": {"lr": 0.0003},
    },
    "paper-cuhk": {
        "scales": _PAPER_SCALES,
        "backbone": {
            "num_blocks": 16,
            "factors_per_block": 32,
            "stage_plan": [[3, 64, 1], [4, 128, 2], [6, 256, 2], [3, 512, 2]],
            "feature_dim": 1024,
        },
        "train": {"lr": 0.0005},
    },
}


def _merge(base: dict, overlay: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_run_config(config_path=None, preset: str = "toy", overrides=None) -> dict:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = _merge(DEFAULTS, PRESETS[preset])
    if config_path is not None:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise DataLoadError(f"cannot read config {config_path}: {exc}")
        try:
            overlay = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}")
        if not isinstance(overlay, dict):
            raise ConfigError(f"config {config_path} must hold a JSON object")
        cfg = _merge(cfg, overlay)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def parse_scales(text: str):
    """'64x32,48x24' -> [[64, 32], [48, 24]]"""
    scales = []
    for part in text.split(","):
        bits = part.lower().split("x")
        if len(bits) != 2:
            raise ConfigError(f"bad scale {part!r}; want HxW like 64x32")
        try:
            scales.append([int(bits[0]), int(bits[1])])
        except ValueError:
            raise ConfigError(f"bad scale {part!r}; want integers like 64x32")
    return scales


def build_model_config(cfg: dict, n_id: int) -> ConsensusConfig:
    backbone = BackboneConfig(
        num_blocks=cfg["backbone"]["num_blocks"],
        factors_per_block=cfg["backbone"]["factors_per_block"],
        stage_plan=tuple(tuple(s) for s in cfg["backbone"]["stage_plan"]),
        fm_kind=cfg["backbone"]["fm_kind"],
        mode=cfg["backbone"]["mode"],
        feature_dim=cfg["backbone"]["feature_dim"],
    )
    pooling = cfg["pooling_assignment"]
    return ConsensusConfig(
        scales=tuple(tuple(s) for s in cfg["scales"]),
        backbone=backbone,
        n_id=n_id,
        pooling_assignment=tuple(pooling) if pooling is not None else None,
    )


def build_train_config(cfg: dict, checkpoint_dir=None, log_path=None) -> TrainConfig:
    t = cfg["train"]
    a = cfg["augment"]
    augment = AugmentConfig(
        crop_padding=a["crop_padding"],
        erase_probability=a["erase_probability"],
        erase_area=tuple(a["erase_area"]),
        erase_aspect=tuple(a["erase_aspect"]),
        flip_probability=a["flip_probability"],
        brightness=a["brightness"],
        contrast=a["contrast"],
        saturation=a["saturation"],
        pca_sigma=a["pca_sigma"],
    )
    return TrainConfig(
        lr=t["lr"], beta1=t["beta1"], beta2=t["beta2"], eps=t["eps"],
        batch_size=t["batch_size"], epochs=t["epochs"], seed=cfg["seed"],
        checkpoint_dir=checkpoint_dir, log_path=log_path,
        checkpoint_every=t["checkpoint_every"], single_thread=t["single_thread"],
        lr_decay_every=t["lr_decay_every"], lr_decay_factor=t["lr_decay_factor"],
        augment=augment,
    )


def build_synth_config(cfg: dict) -> SynthConfig:
    s = cfg["synth"]
    return SynthConfig(
        n_id=s["n_id"], cameras=s["cameras"],
        images_per_id_per_camera=s["images_per_id_per_camera"],
        base_hw=tuple(s["base_hw"]), seed=cfg["seed"],
        color_shift=s["color_shift"], illumination=s["illumination"],
        pose_jitter=s["pose_jitter"], background_clutter=s["background_clutter"],
        occlusion_prob=s["occlusion_prob"], query_camera=s["query_camera"],
    )


def _common_overrides(args) -> dict:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None):
        overrides.setdefault("backbone", {})["mode"] = args.mode
    if getattr(args, "scales", None):
        overrides["scales"] = parse_scales(args.scales)
    if getattr(args, "single_thread", False):
        overrides.setdefault("train", {})["single_thread"] = True
    return overrides


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config, args.preset, _common_overrides(args))
    split = generate_synthetic(build_synth_config(cfg))
    out = Path(args.out)
    export_split(split, out)
    for name, count in split.counts().items():
        print(f"{name}: {count} images")
    print(f"written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.preset, _common_overrides(args))
    split = load_directory(args.data)
    n_id = len(label_mapping(split.train))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = ConsensusNet(build_model_config(cfg, n_id), Rng(cfg["seed"]))
    train_cfg = build_train_config(cfg, checkpoint_dir=out,
                                   log_path=out / "train_log.csv")
    log = fit(model, split, train_cfg)
    last = log.rows[-1]
    print(f"trained {train_cfg.epochs} epochs on {len(split.train)} images "
          f"({n_id} identities)")
    print(f"final mean loss {last.total_loss:.6f}; checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    split = load_directory(args.data)
    if args.train_sanity:
        report = self_retrieval_report(model, split.train)
    else:
        report = evaluate(model, split)
    print("Rank-1  mAP")
    print(f"{report.rank1:.4f}  {report.map:.4f}")
    if report.num_unanswerable:
        print(f"({report.num_unanswerable} unanswerable queries excluded)")
    if args.out:
        save_per_query_ap(args.out, report)
        print(f"per-query AP written to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    records = load_flat_directory(args.images)
    gallery = extract_gallery(model, records)
    save_embeddings(args.out, gallery)
    print(f"embedded {len(gallery)} images at dim {gallery.matrix.shape[1]} "
          f"into {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    hw = tuple(parse_scales(args.hw)[0]) if args.hw else (32, 16)
    entries = run_gradcheck_suite(
        seed=args.seed if args.seed is not None else 0,
        input_hw=hw, feature_dim=args.feature_dim,
        num_blocks=args.blocks, factors=args.factors,
    )
    worst = 0.0
    ok = True
    for e in entries:
        status = "PASS" if e.passed else "FAIL"
        note = "" if not e.refined else f"  (kink at step 1e-5; step {e.step:g})"
        print(f"{e.name:36s} max rel err {e.max_rel_error:.3e}  {status}{note}")
        worst = max(worst, e.max_rel_error)
        ok = ok and e.passed
    print(f"worst: {worst:.3e} (tolerance {entries[0].rtol:g})")
    if not ok:
        raise NumericError("gradient check failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfcnet",
        description="Gated factor backbones with two-scale consensus training "
                    "for person re-identification, plus CMC/mAP evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scales=True):
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--preset", default="toy", choices=sorted(PRESETS),
                       help="named base configuration")
        p.add_argument("--seed", type=int, default=None)
        if scales:
            p.add_argument("--mode", default=None,
                           choices=["full", "fusion_only", "resnext", "resnet"])
            p.add_argument("--scales", default=None,
                           help="comma-separated HxW list, e.g. 64x32,48x24")
            p.add_argument("--single-thread", action="store_true",
                           dest="single_thread",
                           help="strict determinism mode (zeroes log timings)")

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset directory")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint/log directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="CMC/mAP evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="per-query AP CSV path")
    p.add_argument("--train-sanity", action="store_true", dest="train_sanity",
                   help="rank the training images against themselves")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("embed", help="write descriptors for an image directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--hw", default=None, help="probe image size, e.g. 32x16")
    p.add_argument("--feature-dim", type=int, default=32, dest="feature_dim")
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--factors", type=int, default=4)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataLoadError, CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
