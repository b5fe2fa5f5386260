"""One scale-specific branch: stacked blocks of gated factor modules.

A block runs K parallel factor modules plus a gate network scoring how
strongly each factor is present in its input; the gated sum rides on a
residual shortcut. Gate vectors from all blocks concatenate into a factor
signature, and the fusion head averages two projections: the pooled final
feature map and the signature.

Ablation modes select progressively simpler blocks:

    full         gated factor modules, signature used by the head
    fusion_only  gated factor modules, head ignores the signature
    resnext      every factor always active, no gates
    resnet       one wide holistic module per block

Factor modules come in two kinds: a conv bottleneck (1x1 reduce, 3x3 at
the stage stride, 1x1 expand) for image inputs, and a dense kind (two
affine+relu layers) for vector inputs in fast exact tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .optim import Parameter
from .rng import Rng
from .tensor import Tensor

MODES = ("full", "fusion_only", "resnext", "resnet")
FM_KINDS = ("conv_bottleneck", "dense")
POOL_KINDS = ("average", "max")

STEM_STRIDE = 2


@dataclass(frozen=True)
class BackboneConfig:
    num_blocks: int = 4
    factors_per_block: int = 4
    stage_plan: tuple = ((2, 16, 1), (1, 32, 2), (1, 64, 2))
    fm_kind: str = "conv_bottleneck"
    mode: str = "full"
    feature_dim: int = 128

    def __post_init__(self):
        if self.num_blocks < 1 or self.factors_per_block < 1:
            raise ConfigError("num_blocks and factors_per_block must be positive")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.fm_kind not in FM_KINDS:
            raise ConfigError(f"fm_kind must be one of {FM_KINDS}, got {self.fm_kind!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        plan = tuple(tuple(int(v) for v in stage) for stage in self.stage_plan)
        object.__setattr__(self, "stage_plan", plan)
        for stage in plan:
            if len(stage) != 3 or any(v < 1 for v in stage):
                raise ConfigError(f"bad stage triple {stage}; want (blocks, channels, stride)")
        total = sum(s[0] for s in plan)
        if total != self.num_blocks:
            raise ConfigError(
                f"stage plan holds {total} blocks but num_blocks={self.num_blocks}"
            )

    @property
    def signature_length(self) -> int:
        return self.num_blocks * self.factors_per_block

    @property
    def has_signature(self) -> bool:
        return self.mode in ("full", "fusion_only")

    def block_layout(self, in_width: int) -> list:
        """Per-block (in_width, out_width, stride) with stage strides on
        each stage's first block."""
        layout = []
        prev = in_width
        for count, width, stride in self.stage_plan:
            for i in range(count):
                layout.append((prev, width, stride if i == 0 else 1))
                prev = width
        return layout


def toy_config(**overrides) -> BackboneConfig:
    """Desk-scale defaults: 4 blocks, 4 factors, widths 16/32/64."""
    return BackboneConfig(**overrides)


def full_scale_config(**overrides) -> BackboneConfig:
    """Reference structure with 16 blocks of 32 factors (signature 512)."""
    base = dict(
        num_blocks=16,
        factors_per_block=32,
        stage_plan=((3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)),
        feature_dim=1024,
    )
    base.update(overrides)
    return BackboneConfig(**base)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _he_weights(rng: Rng, shape, fan_in: int, gain: float, dtype) -> np.ndarray:
    std = gain / math.sqrt(fan_in)
    return rng.normal(0.0, std, shape).astype(dtype)


class Affine:
    """x @ w + b on (B, in) inputs."""

    def __init__(self, rng: Rng, in_dim: int, out_dim: int, gain: float = 1.0,
                 dtype=np.float32):
        self.w = Parameter(_he_weights(rng, (in_dim, out_dim), in_dim, gain, dtype))
        self.b = Parameter(np.zeros(out_dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w.value), self.b.value)

    def parameters(self):
        return {"w": self.w, "b": self.b}


class Conv:
    def __init__(self, rng: Rng, in_ch: int, out_ch: int, kernel: int, stride: int,
                 padding: int, gain: float = 1.0, bias: bool = True, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.w = Parameter(_he_weights(rng, (out_ch, in_ch, kernel, kernel), fan_in, gain, dtype))
        self.b = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.w.value, stride=self.stride, padding=self.padding)
        if self.b is not None:
            c = self.b.value.shape[0]
            shape = (c, 1, 1) if out.ndim == 3 else (1, c, 1, 1)
            out = T.add(out, T.reshape(self.b.value, shape))
        return out

    def parameters(self):
        params = {"w": self.w}
        if self.b is not None:
            params["b"] = self.b
        return params


def _prefix(params: dict, prefix: str) -> dict:
    return {f"{prefix}.{k}": v for k, v in params.items()}


class FactorModule:
    """Conv bottleneck: 1x1 reduce, relu, 3x3 at the block stride, relu,
    1x1 expand. All K modules of a block share input/output shapes."""

    def __init__(self, rng: Rng, in_ch: int, out_ch: int, stride: int, width: int,
                 dtype=np.float32):
        self.reduce = Conv(rng, in_ch, width, 1, 1, 0, gain=math.sqrt(2.0), dtype=dtype)
        self.mid = Conv(rng, width, width, 3, stride, 1, gain=math.sqrt(2.0), dtype=dtype)
        self.expand = Conv(rng, width, out_ch, 1, 1, 0, gain=1.0, dtype=dtype)
        self.in_ch = in_ch

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-3] != self.in_ch:
            raise DimensionError(
                f"factor module expects {self.in_ch} channels, got {x.shape}"
            )
        h = T.relu(self.reduce.forward(x))
        h = T.relu(self.mid.forward(h))
        return self.expand.forward(h)

    def parameters(self):
        out = {}
        out.update(_prefix(self.reduce.parameters(), "reduce"))
        out.update(_prefix(self.mid.parameters(), "mid"))
        out.update(_prefix(self.expand.parameters(), "expand"))
        return out


class DenseFactorModule:
    """Two affine layers, each followed by relu; the vector-input factor
    module used for fast exact tests."""

    def __init__(self, rng: Rng, in_dim: int, out_dim: int, hidden: int,
                 dtype=np.float32):
        self.fc1 = Affine(rng, in_dim, hidden, gain=math.sqrt(2.0), dtype=dtype)
        self.fc2 = Affine(rng, hidden, out_dim, gain=math.sqrt(2.0), dtype=dtype)
        self.in_dim = in_dim

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(
                f"dense factor module expects width {self.in_dim}, got {x.shape}"
            )
        return T.relu(self.fc2.forward(T.relu(self.fc1.forward(x))))

    def parameters(self):
        out = {}
        out.update(_prefix(self.fc1.parameters(), "fc1"))
        out.update(_prefix(self.fc2.parameters(), "fc2"))
        return out


class GateModule:
    """Factor selection: global average pool, affine to K scores, sigmoid.

    Output gates always lie strictly inside (0,1).
    """

    def __init__(self, rng: Rng, in_ch: int, num_factors: int, dtype=np.float32):
        self.affine = Affine(rng, in_ch, num_factors, gain=1.0, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        pooled = T.pool2d_global(x, "average") if x.ndim >= 3 else x
        single = pooled.ndim == 1
        if single:
            pooled = T.reshape(pooled, (1, pooled.shape[0]))
        gates = T.sigmoid(self.affine.forward(pooled))
        return T.reshape(gates, (gates.shape[1],)) if single else gates

    def parameters(self):
        return _prefix(self.affine.parameters(), "gate")


class FactorBlock:
    """y = shortcut(x) + sum_k gate_k * FM_k(x), one semantic level.

    resnext mode fixes every gate at 1; resnet mode swaps the K modules
    for a single holistic module of K times the bottleneck width. The
    shortcut is identity within a stage and a strided 1x1 projection at
    stage boundaries.
    """

    def __init__(self, rng: Rng, config: BackboneConfig, in_width: int,
                 out_width: int, stride: int, dtype=np.float32):
        k = config.factors_per_block
        self.mode = config.mode
        self.kind = config.fm_kind
        self.num_factors = k
        self.in_width = in_width
        dense = config.fm_kind == "dense"
        width = max(1, out_width // k)

        def make_fm(sub_rng, w):
            if dense:
                return DenseFactorModule(sub_rng, in_width, out_width, w, dtype=dtype)
            return FactorModule(sub_rng, in_width, out_width, stride, w, dtype=dtype)

        if self.mode == "resnet":
            self.fms = [make_fm(rng.split("holistic"), width * k)]
        else:
            self.fms = [make_fm(rng.split(f"fm{i}"), width) for i in range(k)]

        self.gate = None
        if self.mode in ("full", "fusion_only"):
            self.gate = GateModule(rng.split("fsm"), in_width, k, dtype=dtype)

        self.shortcut = None
        if dense:
            if in_width != out_width:
                self.shortcut = Affine(rng.split("shortcut"), in_width, out_width,
                                       gain=1.0, dtype=dtype)
        elif in_width != out_width or stride != 1:
            self.shortcut = Conv(rng.split("shortcut"), in_width, out_width, 1,
                                 stride, 0, gain=1.0, bias=False, dtype=dtype)
        self._dtype = dtype

    def forward(self, x: Tensor):
        """Returns (output, gates). Gates are None in resnet mode and a
        constant all-ones vector in resnext mode."""
        ch_axis = -3 if self.kind == "conv_bottleneck" else -1
        if x.shape[ch_axis] != self.in_width:
            raise DimensionError(
                f"block expects input width {self.in_width}, got {x.shape}"
            )
        short = self.shortcut.forward(x) if self.shortcut is not None else x

        if self.mode == "resnet":
            return T.add(short, self.fms[0].forward(x)), None

        if self.mode == "resnext":
            batched = x.ndim == (4 if self.kind == "conv_bottleneck" else 2)
            shape = (x.shape[0], self.num_factors) if batched else (self.num_factors,)
            gates = Tensor(np.ones(shape, dtype=self._dtype))
        else:
            gates = self.gate.forward(x)

        if self.kind == "conv_bottleneck":
            return T.add(short, self._fused_factor_sum(x, gates)), gates

        acc = short
        single = gates.ndim == 1
        for k, fm in enumerate(self.fms):
            g_k = gates[k] if single else gates[:, k:k + 1]
            acc = T.add(acc, T.mul(g_k, fm.forward(x)))
        return acc, gates

    def _fused_factor_sum(self, x: Tensor, gates: Tensor) -> Tensor:
        """sum_k gate_k * FM_k(x) in three convolutions.

        The K factor modules share their input, so their reduce convs run
        as one conv, their 3x3 convs as one grouped conv, and since the
        expand conv is linear, the gates fold into the hidden activations
        before a single expand conv (plus a gated bias term).
        """
        fms = self.fms
        k = len(fms)
        mid = fms[0].reduce.w.shape[0]
        stride = fms[0].mid.stride
        w_red = T.concat([fm.reduce.w.value for fm in fms], axis=0)
        b_red = T.concat([fm.reduce.b.value for fm in fms], axis=0)
        w_mid = T.concat([fm.mid.w.value for fm in fms], axis=0)
        b_mid = T.concat([fm.mid.b.value for fm in fms], axis=0)
        w_exp = T.concat([fm.expand.w.value for fm in fms], axis=1)
        b_exp = T.concat(
            [T.reshape(fm.expand.b.value, (1, -1)) for fm in fms], axis=0
        )  # (K, C_out)

        single = x.ndim == 3
        cdim = (1, k * mid, 1, 1) if not single else (k * mid, 1, 1)
        h = T.relu(T.add(T.conv2d(x, w_red), T.reshape(b_red, cdim)))
        h = T.relu(T.add(T.conv2d(h, w_mid, stride=stride, padding=1, groups=k),
                         T.reshape(b_mid, cdim)))

        hs = h.shape
        if single:
            hview = T.reshape(h, (k, mid, hs[-2], hs[-1]))
            gview = T.reshape(gates, (k, 1, 1, 1))
            hg = T.reshape(T.mul(hview, gview), hs)
            gates2 = T.reshape(gates, (1, k))
        else:
            hview = T.reshape(h, (hs[0], k, mid, hs[-2], hs[-1]))
            gview = T.reshape(gates, (hs[0], k, 1, 1, 1))
            hg = T.reshape(T.mul(hview, gview), hs)
            gates2 = gates
        out = T.conv2d(hg, w_exp)
        bias = T.matmul(gates2, b_exp)  # (B, C_out)
        cout = b_exp.shape[1]
        bshape = (cout, 1, 1) if single else (bias.shape[0], cout, 1, 1)
        return T.add(out, T.reshape(bias, bshape))

    def parameters(self):
        out = {}
        if self.mode == "resnet":
            out.update(_prefix(self.fms[0].parameters(), "holistic"))
        else:
            for i, fm in enumerate(self.fms):
                out.update(_prefix(fm.parameters(), f"fm{i}"))
        if self.gate is not None:
            out.update(self.gate.parameters())
        if self.shortcut is not None:
            out.update(_prefix(self.shortcut.parameters(), "shortcut"))
        return out


class Backbone:
    """Stem plus num_blocks factor blocks; returns the final feature map
    and the factor signature (concatenated gate vectors, block order)."""

    def __init__(self, config: BackboneConfig, rng: Rng, in_features: int | None = None,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        dense = config.fm_kind == "dense"
        first_width = config.stage_plan[0][1]
        if in_features is None:
            in_features = first_width if dense else 3
        self.in_features = in_features
        if dense:
            self.stem = Affine(rng.split("stem"), in_features, first_width,
                               gain=math.sqrt(2.0), dtype=dtype)
        else:
            self.stem = Conv(rng.split("stem"), in_features, first_width, 3,
                             STEM_STRIDE, 1, gain=math.sqrt(2.0), dtype=dtype)
        self.blocks = [
            FactorBlock(rng.split(f"block{i}"), config, iw, ow, st, dtype=dtype)
            for i, (iw, ow, st) in enumerate(config.block_layout(first_width))
        ]
        self.out_width = config.stage_plan[-1][1]

    def forward(self, x: Tensor):
        """Returns (final feature map, signature). The signature is None
        in resnext/resnet modes."""
        h = T.relu(self.stem.forward(x))
        gate_vecs = []
        for block in self.blocks:
            h, gates = block.forward(h)
            if self.config.has_signature:
                gate_vecs.append(gates)
        if not self.config.has_signature:
            return h, None
        axis = gate_vecs[0].ndim - 1
        return h, T.concat(gate_vecs, axis=axis)

    def parameters(self):
        out = _prefix(self.stem.parameters(), "stem")
        for i, block in enumerate(self.blocks):
            out.update(_prefix(block.parameters(), f"block{i}"))
        return out


class FusionHead:
    """Projects the pooled feature map and the factor signature to the
    branch feature space and averages them (full mode); the other modes
    use the pooled projection alone."""

    def __init__(self, config: BackboneConfig, rng: Rng, in_width: int,
                 pool_kind: str = "average", dtype=np.float32):
        if pool_kind not in POOL_KINDS:
            raise ConfigError(f"pool_kind must be one of {POOL_KINDS}, got {pool_kind!r}")
        self.mode = config.mode
        self.pool_kind = pool_kind
        d = config.feature_dim
        # full mode halves the summed projections, so its map projection
        # starts at twice the scale and the signature projection at zero:
        # the branch feature distribution at init is then mode-independent
        # and the signature path grows only as training finds use for it
        map_gain = 2.0 if self.mode == "full" else 1.0
        self.proj_map = Affine(rng.split("proj_map"), in_width, d, gain=map_gain,
                               dtype=dtype)
        self.proj_sig = None
        if self.mode == "full":
            self.proj_sig = Affine(rng.split("proj_sig"), config.signature_length, d,
                                   gain=0.0, dtype=dtype)

    def forward(self, fmap: Tensor, signature: Tensor | None) -> Tensor:
        pooled = T.pool2d_global(fmap, self.pool_kind) if fmap.ndim >= 3 else fmap
        single = pooled.ndim == 1
        if single:
            pooled = T.reshape(pooled, (1, pooled.shape[0]))
        p1 = self.proj_map.forward(pooled)
        if self.mode == "full":
            if signature is None:
                raise ContractError("full mode needs a factor signature")
            sig = T.reshape(signature, (1, signature.shape[0])) if signature.ndim == 1 else signature
            p2 = self.proj_sig.forward(sig)
            r = T.mul(T.add(p1, p2), 0.5)
        else:
            r = p1
        return T.reshape(r, (r.shape[1],)) if single else r

    def parameters(self):
        out = _prefix(self.proj_map.parameters(), "proj_map")
        if self.proj_sig is not None:
            out.update(_prefix(self.proj_sig.parameters(), "proj_sig"))
        return out


class Classifier:
    """Single affine layer from branch feature to identity logits."""

    def __init__(self, rng: Rng, feature_dim: int, n_id: int, dtype=np.float32):
        self.affine = Affine(rng, feature_dim, n_id, gain=1.0, dtype=dtype)

    def forward(self, r: Tensor) -> Tensor:
        single = r.ndim == 1
        x = T.reshape(r, (1, r.shape[0])) if single else r
        logits = self.affine.forward(x)
        return T.reshape(logits, (logits.shape[1],)) if single else logits

    def parameters(self):
        return _prefix(self.affine.parameters(), "cls")


class ScaleBranch:
    """Backbone + fusion head + classifier for one input scale."""

    def __init__(self, config: BackboneConfig, n_id: int, rng: Rng,
                 pool_kind: str = "average", in_features: int | None = None,
                 dtype=np.float32):
        self.config = config
        self.backbone = Backbone(config, rng.split("backbone"), in_features, dtype=dtype)
        self.head = FusionHead(config, rng.split("head"), self.backbone.out_width,
                               pool_kind, dtype=dtype)
        self.classifier = Classifier(rng.split("classifier"), config.feature_dim,
                                     n_id, dtype=dtype)

    def forward(self, x: Tensor):
        """Returns (branch feature, logits, signature)."""
        fmap, signature = self.backbone.forward(x)
        r = self.head.forward(fmap, signature)
        return r, self.classifier.forward(r), signature

    def parameters(self):
        out = _prefix(self.backbone.parameters(), "backbone")
        out.update(_prefix(self.head.parameters(), "head"))
        out.update(_prefix(self.classifier.parameters(), "classifier"))
        return out
