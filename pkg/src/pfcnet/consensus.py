"""Multi-scale consensus model.

m scale-specific branches (independent weights, identical structure) each
classify their own resized view of the image. The consensus feature is
the concatenation of all branch features in scale order; a further affine
classifier scores it. Training adds the consensus cross-entropy to every
branch's own loss, so one backward pass feeds consensus gradients into
all branches.

The retrieval descriptor is the L2-normalized consensus feature.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import POOL_KINDS, BackboneConfig, Classifier, ScaleBranch, _prefix
from .errors import ConfigError, DimensionError
from .rng import Rng
from .tensor import Tensor


def default_pooling(scales) -> tuple:
    """Largest scale pools by average (global context), the rest by max."""
    areas = [h * w for h, w in scales]
    largest = areas.index(max(areas))
    return tuple("average" if i == largest else "max" for i in range(len(scales)))


@dataclass(frozen=True)
class ConsensusConfig:
    scales: tuple = ((64, 32), (48, 24))
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    n_id: int = 8
    pooling_assignment: tuple | None = None

    def __post_init__(self):
        scales = tuple((int(h), int(w)) for h, w in self.scales)
        if not scales:
            raise ConfigError("need at least one scale")
        if any(h < 1 or w < 1 for h, w in scales):
            raise ConfigError(f"bad scales {scales}")
        object.__setattr__(self, "scales", scales)
        if self.n_id < 2:
            raise ConfigError("n_id must be at least 2")
        pooling = self.pooling_assignment
        if pooling is None:
            pooling = default_pooling(scales)
        pooling = tuple(pooling)
        if len(pooling) != len(scales):
            raise ConfigError(
                f"{len(pooling)} pooling kinds for {len(scales)} scales"
            )
        if any(p not in POOL_KINDS for p in pooling):
            raise ConfigError(f"pooling kinds must be in {POOL_KINDS}, got {pooling}")
        object.__setattr__(self, "pooling_assignment", pooling)

    @property
    def num_scales(self) -> int:
        return len(self.scales)

    @property
    def descriptor_dim(self) -> int:
        return self.num_scales * self.backbone.feature_dim


@dataclass
class ForwardResult:
    branch_features: list
    branch_logits: list
    consensus_feature: Tensor
    consensus_logits: Tensor


class ConsensusNet:
    def __init__(self, config: ConsensusConfig, rng: Rng | int = 0, dtype=np.float32):
        if config.backbone.fm_kind != "conv_bottleneck":
            raise ConfigError("the consensus model takes image inputs; use conv_bottleneck")
        if not isinstance(rng, Rng):
            rng = Rng(rng)
        self.config = config
        self.dtype = dtype
        self.branches = [
            ScaleBranch(config.backbone, config.n_id, rng.split(f"branch{i}"),
                        pool_kind=config.pooling_assignment[i], dtype=dtype)
            for i in range(config.num_scales)
        ]
        self.consensus_classifier = Classifier(
            rng.split("consensus"), config.descriptor_dim, config.n_id, dtype=dtype
        )

    def forward(self, images) -> ForwardResult:
        """images: one (B,3,H,W) or (3,H,W) tensor per configured scale."""
        cfg = self.config
        if len(images) != cfg.num_scales:
            raise DimensionError(
                f"got {len(images)} inputs for {cfg.num_scales} scales"
            )
        feats, logits = [], []
        for i, (img, (h, w)) in enumerate(zip(images, cfg.scales)):
            img = img if isinstance(img, Tensor) else Tensor(img, dtype=self.dtype)
            if img.shape[-2:] != (h, w):
                raise DimensionError(
                    f"branch {i} expects {h}x{w} input, got {img.shape[-2]}x{img.shape[-1]}"
                )
            r, lg, _ = self.branches[i].forward(img)
            feats.append(r)
            logits.append(lg)
        axis = feats[0].ndim - 1
        consensus = T.concat(feats, axis=axis)
        return ForwardResult(
            branch_features=feats,
            branch_logits=logits,
            consensus_feature=consensus,
            consensus_logits=self.consensus_classifier.forward(consensus),
        )

    def loss_components(self, result: ForwardResult, labels) -> list:
        """The m per-branch cross-entropies followed by the consensus one."""
        comps = [T.softmax_cross_entropy(lg, labels) for lg in result.branch_logits]
        comps.append(T.softmax_cross_entropy(result.consensus_logits, labels))
        return comps

    def total_loss(self, result: ForwardResult, labels) -> Tensor:
        comps = self.loss_components(result, labels)
        total = comps[0]
        for c in comps[1:]:
            total = T.add(total, c)
        return total

    def extract_embedding(self, images) -> np.ndarray:
        """L2-normalized consensus feature; the retrieval descriptor.

        Runs without recording gradients and applies no augmentation.
        Zero-norm features come back as zero vectors with a warning.
        """
        with T.no_grad():
            result = self.forward(images)
        feat = result.consensus_feature.data
        single = feat.ndim == 1
        mat = feat[None] if single else feat
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        degenerate = norms[:, 0] == 0
        if degenerate.any():
            warnings.warn(
                f"{int(degenerate.sum())} embedding(s) have zero norm; returning zeros"
            )
        safe = np.where(norms == 0, 1.0, norms)
        out = (mat / safe).astype(mat.dtype)
        out[degenerate] = 0
        return out[0] if single else out

    def zero_grads(self) -> None:
        for p in self.parameters().values():
            p.clear_grad()

    def parameters(self) -> dict:
        out = {}
        for i, branch in enumerate(self.branches):
            out.update(_prefix(branch.parameters(), f"branch{i}"))
        out.update(_prefix(self.consensus_classifier.parameters(), "consensus"))
        return out
