"""Synthetic multi-camera person images and directory loading.

The synthetic generator renders each identity as a deterministic figure
(head, patterned torso, legs) whose colors and texture come from the
identity's seed. Each camera applies a fixed color gain, gamma, and
geometry bias; each image adds seeded nuisances: pose jitter, lighting
change, background clutter, and an optional occluding rectangle. Every
record derives from Rng splits of the dataset seed, so generation is
reproducible and order-independent.

Real datasets load from a train/query/gallery directory layout with
filenames of the form `<identity>_c<camera>_<rest>` (for example
`0002_c1s1_000451_03.png` is identity 2 seen by camera 1).
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import load_png, save_png
from .errors import ConfigError, DataLoadError
from .rng import Rng

_NAME_RE = re.compile(r"^(\d+)_c(\d+)")
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class PersonImageRecord:
    identity: int
    camera: int
    image: np.ndarray  # (3,H,W) float in [0,1]
    source: str = ""

    def __post_init__(self):
        if self.identity < 1 or self.camera < 1:
            raise ConfigError("identity and camera labels are 1-based positives")


@dataclass
class DatasetSplit:
    train: list
    query: list
    gallery: list

    def __post_init__(self):
        gallery_pairs = {(r.identity, r.camera) for r in self.gallery}
        missing = sorted({
            q.identity for q in self.query
            if not any(i == q.identity and c != q.camera for i, c in gallery_pairs)
        })
        if missing:
            warnings.warn(
                f"queries for identities {missing} have no cross-camera gallery match"
            )

    def counts(self) -> dict:
        return {"train": len(self.train), "query": len(self.query),
                "gallery": len(self.gallery)}


@dataclass(frozen=True)
class SynthConfig:
    n_id: int = 8
    cameras: int = 2
    images_per_id_per_camera: int = 10
    base_hw: tuple = (64, 32)
    seed: int = 0
    color_shift: float = 0.1
    illumination: float = 0.25
    pose_jitter: float = 0.3
    background_clutter: float = 0.3
    occlusion_prob: float = 0.15
    query_camera: int = 1

    def __post_init__(self):
        if self.n_id < 1 or self.images_per_id_per_camera < 1:
            raise ConfigError("counts must be positive")
        if self.cameras < 2:
            raise ConfigError("need at least 2 cameras for cross-camera evaluation")
        h, w = self.base_hw
        if h < 16 or w < 8:
            raise ConfigError(f"base resolution {self.base_hw} too small to render")
        for name in ("color_shift", "illumination", "pose_jitter",
                     "background_clutter", "occlusion_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0,1], got {v}")
        if not 1 <= self.query_camera <= self.cameras:
            raise ConfigError("query_camera out of range")


def _identity_style(rng: Rng) -> dict:
    torso = rng.uniform(0.15, 0.95, 3)
    # torso texture must contrast with the torso base color
    pattern_color = rng.uniform(0.15, 0.95, 3)
    for attempt in range(20):
        if np.linalg.norm(pattern_color - torso) >= 0.5:
            break
        pattern_color = rng.uniform(0.15, 0.95, 3)
    return {
        "torso": torso,
        "legs": rng.uniform(0.15, 0.95, 3),
        "skin": rng.uniform(0.45, 0.9, 3),
        "pattern": int(rng.integers(1, 4)),  # 1 hbars, 2 vbars, 3 checker
        "pattern_color": pattern_color,
        "period": int(rng.integers(2, 7)),
    }


def _style_vector(style: dict) -> np.ndarray:
    return np.concatenate([style["torso"], style["legs"]])


def _identity_styles(root: Rng, n_id: int, min_distance: float = 0.7,
                     attempts: int = 200) -> list:
    """Draw identity appearances keeping torso/leg colors pairwise apart.

    Distinct clothing is what makes re-identification well posed at this
    scale, so candidates too close to an earlier identity are redrawn
    (deterministically). If no candidate clears the threshold the most
    distant one wins.
    """
    styles, vecs = [], []
    for pid in range(1, n_id + 1):
        best, best_d = None, -1.0
        for a in range(attempts):
            cand = _identity_style(root.split(f"id{pid}/a{a}"))
            v = _style_vector(cand)
            d = min((float(np.linalg.norm(v - u)) for u in vecs), default=np.inf)
            if d > best_d:
                best, best_d = cand, d
            if d >= min_distance:
                break
        styles.append(best)
        vecs.append(_style_vector(best))
    return styles


def _camera_style(rng: Rng, strength: float) -> dict:
    return {
        "gain": 1.0 + strength * rng.uniform(-0.5, 0.5, 3),
        "gamma": 1.0 + 0.6 * strength * rng.uniform(-0.5, 0.5),
        "x_bias": rng.uniform(-0.08, 0.08),
        "scale_bias": 1.0 + rng.uniform(-0.05, 0.05),
    }


def _fill_rect(img, r0, r1, c0, c1, color):
    h, w = img.shape[1:]
    r0, r1 = max(0, r0), min(h, r1)
    c0, c1 = max(0, c0), min(w, c1)
    if r0 < r1 and c0 < c1:
        img[:, r0:r1, c0:c1] = color[:, None, None]


def _render(cfg: SynthConfig, style: dict, cam: dict, rng: Rng) -> np.ndarray:
    h, w = cfg.base_hw
    img = np.empty((3, h, w), dtype=np.float64)
    # background varies per image (not per camera), scaled by the clutter
    # strength, so backgrounds teach invariance instead of camera identity
    bg = 0.45 + cfg.background_clutter * rng.uniform(-0.2, 0.2, 3)
    img[:] = bg[:, None, None]

    # background clutter: a few muted rectangles plus pixel noise
    n_blobs = int(round(4 * cfg.background_clutter))
    for _ in range(n_blobs):
        r0 = int(rng.integers(0, h))
        c0 = int(rng.integers(0, w))
        bh = int(rng.integers(2, max(3, h // 4)))
        bw = int(rng.integers(2, max(3, w // 4)))
        color = rng.uniform(0.3, 0.7, 3)
        _fill_rect(img, r0, r0 + bh, c0, c0 + bw, color)

    # pose: horizontal shift and height scale around the camera's bias
    cx = w * (0.5 + cam["x_bias"] + cfg.pose_jitter * rng.uniform(-0.1, 0.1))
    scale = cam["scale_bias"] * (1.0 + cfg.pose_jitter * rng.uniform(-0.08, 0.08))
    sway = cfg.pose_jitter * rng.uniform(-0.3, 0.3)

    def rows(top, bottom):
        return int(round(h * top * scale)), int(round(h * bottom * scale))

    # head
    r0, r1 = rows(0.04, 0.19)
    rad = max(1, (r1 - r0) // 2)
    _fill_rect(img, r0, r1, int(cx - rad), int(cx + rad), style["skin"])

    # torso with its texture pattern
    r0, r1 = rows(0.20, 0.58)
    half = w * 0.30
    c0, c1 = int(cx - half), int(cx + half)
    _fill_rect(img, r0, r1, c0, c1, style["torso"])
    p = style["period"]
    rr0, rr1 = max(0, r0), min(h, r1)
    cc0, cc1 = max(0, c0), min(w, c1)
    if rr0 < rr1 and cc0 < cc1 and style["pattern"]:
        ys = np.arange(rr0, rr1)[:, None]
        xs = np.arange(cc0, cc1)[None, :]
        if style["pattern"] == 1:
            mask = (ys // p) % 2 == 0
        elif style["pattern"] == 2:
            mask = (xs // p) % 2 == 0
        else:
            mask = ((ys // p) + (xs // p)) % 2 == 0
        mask = np.broadcast_to(mask, (rr1 - rr0, cc1 - cc0))
        region = img[:, rr0:rr1, cc0:cc1]
        region[:, mask] = style["pattern_color"][:, None]

    # legs: two columns separated by a swaying gap
    r0, r1 = rows(0.58, 0.97)
    leg_w = w * 0.14
    gap = w * (0.05 + 0.04 * sway)
    for side in (-1, 1):
        mid = cx + side * (gap / 2 + leg_w / 2)
        _fill_rect(img, r0, r1, int(mid - leg_w / 2), int(mid + leg_w / 2), style["legs"])

    # occlusion
    if cfg.occlusion_prob > 0 and rng.random() < cfg.occlusion_prob:
        oh = int(rng.integers(h // 6, h // 3))
        ow = int(rng.integers(w // 4, int(w * 0.8)))
        r0 = int(rng.integers(0, h - oh))
        c0 = int(rng.integers(0, w - ow))
        shade = np.full(3, rng.uniform(0.2, 0.5))
        _fill_rect(img, r0, r0 + oh, c0, c0 + ow, shade)

    # lighting, then the fixed camera transform
    img *= 1.0 + cfg.illumination * rng.uniform(-0.5, 0.5)
    if cfg.background_clutter > 0:
        img += rng.normal(0.0, 0.04 * cfg.background_clutter, img.shape)
    img = np.clip(img, 0.0, 1.0)
    img = img ** cam["gamma"]
    img *= cam["gain"][:, None, None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic(config: SynthConfig) -> DatasetSplit:
    """Deterministic dataset; the query camera's images are reserved for
    queries, every other camera feeds both train and gallery."""
    root = Rng(config.seed)
    styles = _identity_styles(root, config.n_id)
    id_styles = {pid: styles[pid - 1] for pid in range(1, config.n_id + 1)}
    cam_styles = {
        cid: _camera_style(root.split(f"cam{cid}"), config.color_shift)
        for cid in range(1, config.cameras + 1)
    }
    query, rest = [], []
    for pid in range(1, config.n_id + 1):
        for cid in range(1, config.cameras + 1):
            for k in range(config.images_per_id_per_camera):
                rec_rng = root.split(f"rec/{pid}/{cid}/{k}")
                img = _render(config, id_styles[pid], cam_styles[cid], rec_rng)
                rec = PersonImageRecord(pid, cid, img, source=f"synth:{pid}/{cid}/{k}")
                (query if cid == config.query_camera else rest).append(rec)
    return DatasetSplit(train=list(rest), query=query, gallery=list(rest))


# ---------------------------------------------------------------------------
# directory layout
# ---------------------------------------------------------------------------

def parse_image_name(name: str):
    """Identity and camera from `<identity>_c<camera>_<rest>` names, or
    None when the name does not follow the grammar."""
    m = _NAME_RE.match(name)
    if not m:
        return None
    return int(m.group(1)), int(m.group(2))


def _load_image_dir(path: Path) -> list:
    records = []
    for f in sorted(path.iterdir()):
        if f.suffix.lower() not in _IMAGE_SUFFIXES:
            continue
        parsed = parse_image_name(f.name)
        if parsed is None:
            warnings.warn(f"skipping {f.name}: name does not match <id>_c<camera>_...")
            continue
        identity, camera = parsed
        records.append(PersonImageRecord(identity, camera, load_png(f), source=str(f)))
    return records


def load_flat_directory(root) -> list:
    """All grammar-named images directly inside one directory."""
    root = Path(root)
    if not root.is_dir():
        raise DataLoadError(f"{root} is not a directory")
    records = _load_image_dir(root)
    if not records:
        raise DataLoadError(f"no loadable images in {root}")
    return records


def load_directory(root) -> DatasetSplit:
    """Load a train/query/gallery layout written by export_split."""
    root = Path(root)
    parts = {}
    for split in ("train", "query", "gallery"):
        sub = root / split
        if not sub.is_dir():
            raise DataLoadError(f"missing {split}/ under {root}")
        parts[split] = _load_image_dir(sub)
        if not parts[split]:
            raise DataLoadError(f"empty split {split}/ under {root}")
    return DatasetSplit(**parts)


def export_split(split: DatasetSplit, out_dir) -> None:
    """Write the split back out as PNGs in the directory layout."""
    out = Path(out_dir)
    for name, records in (("train", split.train), ("query", split.query),
                          ("gallery", split.gallery)):
        sub = out / name
        sub.mkdir(parents=True, exist_ok=True)
        for i, rec in enumerate(records):
            save_png(sub / f"{rec.identity:04d}_c{rec.camera}s1_{i:06d}.png", rec.image)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def label_mapping(records) -> dict:
    """Bijection from the identities present to contiguous [0, n_id)."""
    return {pid: i for i, pid in enumerate(sorted({r.identity for r in records}))}


def batch_sampler(records, batch_size: int, rng: Rng) -> list:
    """One epoch of index batches: a fresh uniform shuffle, final short
    batch kept."""
    if not records:
        raise DataLoadError("empty training set")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    order = rng.permutation(len(records))
    return [order[i:i + batch_size].tolist()
            for i in range(0, len(records), batch_size)]
