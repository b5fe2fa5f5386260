"""Single-query retrieval evaluation: distances, ranking, CMC, and mAP.

Protocol: each query image ranks the gallery by ascending Euclidean
distance between L2-normalized descriptors. Gallery entries sharing BOTH
the query's identity and camera are excluded before ranking (the standard
junk rule); ties break toward the lower gallery index. A query whose
valid gallery holds no relevant entry is flagged unanswerable and left
out of the averages.
"""
from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import resize_for_scales
from .errors import DataLoadError, DimensionError
from .tensor import Tensor


@dataclass
class EmbeddingGallery:
    matrix: np.ndarray        # (n, dim)
    identities: np.ndarray    # (n,)
    cameras: np.ndarray       # (n,)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.identities = np.asarray(self.identities, dtype=np.int64)
        self.cameras = np.asarray(self.cameras, dtype=np.int64)
        n = self.matrix.shape[0]
        if self.identities.shape != (n,) or self.cameras.shape != (n,):
            raise DimensionError(
                f"metadata length does not match {n} descriptor rows"
            )
        norms = np.linalg.norm(self.matrix, axis=1)
        self.degenerate = np.abs(norms - 1.0) > 1e-5
        if self.degenerate.any():
            warnings.warn(
                f"{int(self.degenerate.sum())} descriptor(s) are not unit-norm"
            )

    def __len__(self):
        return self.matrix.shape[0]


@dataclass
class EvalReport:
    cmc: np.ndarray           # values over ranks 1..R
    map: float
    per_query_ap: np.ndarray  # NaN for unanswerable queries
    num_unanswerable: int

    @property
    def rank1(self) -> float:
        return float(self.cmc[0]) if self.cmc.size else float("nan")


def pairwise_distances(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Euclidean distances, (n_q, n_g). On unit vectors this orders the
    gallery identically to cosine distance."""
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise DimensionError(
            f"descriptor matrices disagree: {q.shape} vs {g.shape}"
        )
    diff = q[:, None, :] - g[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def rank_gallery(distances: np.ndarray, query_identity: int, query_camera: int,
                 gallery_identities: np.ndarray, gallery_cameras: np.ndarray) -> np.ndarray:
    """Valid gallery indices sorted by ascending distance.

    Excludes entries sharing both identity and camera with the query;
    equal distances order by ascending gallery index.
    """
    junk = (gallery_identities == query_identity) & (gallery_cameras == query_camera)
    valid = np.flatnonzero(~junk)
    order = np.argsort(distances[valid], kind="stable")
    return valid[order]


def average_precision(relevance: np.ndarray):
    """AP of one ranked list from its relevance flags; None when nothing
    is relevant (the query is unanswerable)."""
    relevance = np.asarray(relevance, dtype=bool)
    total = int(relevance.sum())
    if total == 0:
        return None
    hits = np.cumsum(relevance)
    ranks = np.arange(1, relevance.size + 1)
    return float((hits[relevance] / ranks[relevance]).sum() / total)


def cmc_curve(rankings_relevance, num_ranks: int | None = None) -> np.ndarray:
    """CMC(k) = fraction of answerable queries whose first relevant match
    sits at rank <= k, for k = 1..num_ranks."""
    flags = [np.asarray(r, dtype=bool) for r in rankings_relevance]
    if num_ranks is None:
        num_ranks = max((f.size for f in flags), default=0)
    curve = np.zeros(num_ranks, dtype=np.float64)
    counted = 0
    for f in flags:
        hits = np.flatnonzero(f)
        if hits.size == 0:
            continue
        counted += 1
        first = hits[0]
        if first < num_ranks:
            curve[first:] += 1.0
    return curve / counted if counted else curve


def evaluate_embeddings(query: EmbeddingGallery, gallery: EmbeddingGallery,
                        exclude_self: bool = False) -> EvalReport:
    """Rank every query against the gallery and report CMC and mAP.

    With exclude_self=True, row i of the query set is assumed to BE row i
    of the gallery (train-as-query sanity evaluation): only that row is
    excluded and relevance ignores cameras.
    """
    dists = pairwise_distances(query.matrix, gallery.matrix)
    aps = np.full(len(query), np.nan)
    relevances = []
    for i in range(len(query)):
        if exclude_self:
            valid = np.flatnonzero(np.arange(len(gallery)) != i)
            order = valid[np.argsort(dists[i, valid], kind="stable")]
        else:
            order = rank_gallery(dists[i], query.identities[i], query.cameras[i],
                                 gallery.identities, gallery.cameras)
        rel = gallery.identities[order] == query.identities[i]
        relevances.append(rel)
        ap = average_precision(rel)
        if ap is None:
            warnings.warn(f"query {i} has no relevant gallery entry; excluded from mAP")
        else:
            aps[i] = ap
    answered = ~np.isnan(aps)
    return EvalReport(
        cmc=cmc_curve(relevances),
        map=float(aps[answered].mean()) if answered.any() else float("nan"),
        per_query_ap=aps,
        num_unanswerable=int((~answered).sum()),
    )


# ---------------------------------------------------------------------------
# model-level evaluation
# ---------------------------------------------------------------------------

def extract_gallery(model, records, batch_size: int = 32) -> EmbeddingGallery:
    """Embed records with resize-only preprocessing (no augmentation)."""
    scales = model.config.scales
    rows = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        per_scale = [[] for _ in scales]
        for rec in chunk:
            for s, img in enumerate(resize_for_scales(rec.image, scales)):
                per_scale[s].append(img)
        images = [Tensor(np.stack(imgs), dtype=model.dtype) for imgs in per_scale]
        rows.append(model.extract_embedding(images))
    return EmbeddingGallery(
        matrix=np.concatenate(rows, axis=0),
        identities=[r.identity for r in records],
        cameras=[r.camera for r in records],
    )


def evaluate(model, split) -> EvalReport:
    """Standard protocol: the split's queries against its gallery."""
    q = extract_gallery(model, split.query)
    g = extract_gallery(model, split.gallery)
    return evaluate_embeddings(q, g)


def self_retrieval_report(model, records) -> EvalReport:
    """Retrieval quality on one record set, each record querying all the
    others (self excluded). Used as the train-as-query sanity check."""
    g = extract_gallery(model, records)
    return evaluate_embeddings(g, g, exclude_self=True)


def save_per_query_ap(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_index", "average_precision"])
        for i, ap in enumerate(report.per_query_ap):
            writer.writerow([i, "" if np.isnan(ap) else repr(float(ap))])


# ---------------------------------------------------------------------------
# embedding file format: binary header (count, dim) + float64 rows,
# with an identity/camera sidecar CSV at <path>.meta.csv
# ---------------------------------------------------------------------------

def save_embeddings(path, gallery: EmbeddingGallery) -> None:
    path = Path(path)
    mat = gallery.matrix.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", mat.shape[0], mat.shape[1]))
        fh.write(mat.tobytes())
    with open(path.with_suffix(path.suffix + ".meta.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "identity", "camera"])
        for i in range(len(gallery)):
            writer.writerow([i, int(gallery.identities[i]), int(gallery.cameras[i])])


def load_embeddings(path) -> EmbeddingGallery:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise DataLoadError(f"{path}: truncated header")
        count, dim = struct.unpack("<QQ", header)
        payload = fh.read()
    expected = count * dim * 8
    if len(payload) != expected:
        raise DataLoadError(
            f"{path}: expected {expected} payload bytes, found {len(payload)}"
        )
    matrix = np.frombuffer(payload, dtype="<f8").reshape(count, dim).copy()
    meta_path = path.with_suffix(path.suffix + ".meta.csv")
    if not meta_path.exists():
        raise DataLoadError(f"missing sidecar {meta_path}")
    identities, cameras = [], []
    with open(meta_path, newline="") as fh:
        for row in csv.DictReader(fh):
            identities.append(int(row["identity"]))
            cameras.append(int(row["camera"]))
    return EmbeddingGallery(matrix=matrix, identities=identities, cameras=cameras)
