"""Multi-loss training loop: Adam over every branch plus the consensus
classifier, per-epoch CSV logging, and lossless binary checkpoints.

Determinism contract: the run seed fixes weight init; epoch e draws all
of its shuffling and augmentation randomness from split(seed, "epoch e"),
so a run resumed from a checkpoint replays the remaining epochs exactly.
In single_thread mode the wall-time column logs as 0.0, which makes two
same-seed runs produce byte-identical logs as well as checkpoints.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import AugmentConfig, compose_pipeline
from .backbone import BackboneConfig
from .consensus import ConsensusConfig, ConsensusNet
from .data import batch_sampler, label_mapping
from .errors import CheckpointError, ConfigError, ContractError, NumericError
from .optim import adam_step
from .rng import Rng
from .tensor import Tensor

_MAGIC = b"PFCK"
_VERSION = 1
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0003
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 80
    seed: int = 0
    checkpoint_dir: str | None = None
    log_path: str | None = None
    checkpoint_every: int = 10
    single_thread: bool = False
    lr_decay_every: int | None = None   # optional step decay, off by default
    lr_decay_factor: float = 0.1
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0,1), got {self.beta1}, {self.beta2}")

    def lr_at(self, epoch: int) -> float:
        if not self.lr_decay_every:
            return self.lr
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class EpochStats:
    epoch: int
    total_loss: float
    branch_losses: list
    consensus_loss: float
    seconds: float

    def csv_row(self) -> list:
        return ([self.epoch, repr(self.total_loss)]
                + [repr(v) for v in self.branch_losses]
                + [repr(self.consensus_loss), repr(self.seconds)])


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    @staticmethod
    def header(num_branches: int) -> list:
        return (["epoch", "total_loss"]
                + [f"branch_loss_{i + 1}" for i in range(num_branches)]
                + ["consensus_loss", "seconds"])


def train_epoch(model: ConsensusNet, records, mapping, config: TrainConfig,
                epoch_rng: Rng, epoch: int) -> EpochStats:
    """One pass: augment, forward at every scale, multi-loss backward,
    Adam step, clear gradients."""
    scales = model.config.scales
    m = model.config.num_scales
    lr = config.lr_at(epoch)
    params = model.parameters()
    batches = batch_sampler(records, config.batch_size, epoch_rng.split("shuffle"))

    t0 = time.perf_counter()
    comp_sums = np.zeros(m + 1)
    total_sum = 0.0
    seen = 0
    pos = 0
    for b, idx in enumerate(batches):
        per_scale = [[] for _ in scales]
        labels = []
        for j, i in enumerate(idx):
            rec = records[i]
            views = compose_pipeline(rec.image, config.augment, scales,
                                     epoch_rng.split(f"aug{pos + j}"))
            for s, v in enumerate(views):
                per_scale[s].append(v)
            labels.append(mapping[rec.identity])
        pos += len(idx)

        images = [Tensor(np.stack(v), dtype=model.dtype) for v in per_scale]
        result = model.forward(images)
        comps = model.loss_components(result, labels)
        total = comps[0]
        for c in comps[1:]:
            total = T.add(total, c)
        comp_vals = [float(c.data) for c in comps]
        if not np.isfinite(comp_vals).all():
            raise NumericError(
                f"non-finite loss at epoch {epoch} batch {b}: components {comp_vals}"
            )
        T.backward(total)
        for p in params.values():
            adam_step(p, lr, config.beta1, config.beta2, config.eps)
            p.clear_grad()

        n = len(idx)
        comp_sums += np.array(comp_vals) * n
        total_sum += float(total.data) * n
        seen += n

    seconds = time.perf_counter() - t0
    return EpochStats(
        epoch=epoch,
        total_loss=total_sum / seen,
        branch_losses=list(comp_sums[:m] / seen),
        consensus_loss=comp_sums[m] / seen,
        seconds=0.0 if config.single_thread else seconds,
    )


def fit(model: ConsensusNet, split, config: TrainConfig,
        start_epoch: int = 0) -> TrainLog:
    """Run epochs start_epoch..epochs, appending log rows and writing a
    checkpoint every checkpoint_every epochs plus one at the end."""
    mapping = label_mapping(split.train)
    if len(mapping) != model.config.n_id:
        raise ContractError(
            f"model classifies {model.config.n_id} identities but the train "
            f"set holds {len(mapping)}"
        )

    ckpt_dir = None
    if config.checkpoint_dir is not None:
        ckpt_dir = Path(config.checkpoint_dir)
        try:
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            probe = ckpt_dir / ".write_probe"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as exc:
            raise CheckpointError(f"checkpoint dir {ckpt_dir} is not writable: {exc}")

    log_fh = None
    if config.log_path is not None:
        fresh = start_epoch == 0 or not Path(config.log_path).exists()
        log_fh = open(config.log_path, "w" if fresh else "a", newline="")
        if fresh:
            log_fh.write(",".join(TrainLog.header(model.config.num_scales)) + "\n")

    root = Rng(config.seed)
    log = TrainLog()
    try:
        for epoch in range(start_epoch, config.epochs):
            stats = train_epoch(model, split.train, mapping, config,
                                root.split(f"epoch{epoch}"), epoch)
            log.rows.append(stats)
            if log_fh is not None:
                log_fh.write(",".join(str(v) for v in stats.csv_row()) + "\n")
                log_fh.flush()
            done = epoch + 1
            if ckpt_dir is not None and (
                done % config.checkpoint_every == 0 or done == config.epochs
            ):
                save_checkpoint(ckpt_dir / f"epoch_{done:03d}.ckpt", model, done)
    finally:
        if log_fh is not None:
            log_fh.close()
    return log


# ---------------------------------------------------------------------------
# checkpoint format: little-endian binary. Layout:
#   magic "PFCK", u32 version, u32 json length, config JSON,
#   u32 epochs_done, u32 parameter count, then per parameter:
#     u16 name length, name, u8 dtype code, u8 ndim, u32 dims...,
#     value bytes, adam_m bytes, adam_v bytes, u64 step_count,
#   and a trailing sha256 of everything before it.
# ---------------------------------------------------------------------------

def _config_blob(model: ConsensusNet) -> bytes:
    cfg = model.config
    payload = {
        "scales": [list(s) for s in cfg.scales],
        "pooling_assignment": list(cfg.pooling_assignment),
        "n_id": cfg.n_id,
        "dtype": str(np.dtype(model.dtype)),
        "backbone": {
            "num_blocks": cfg.backbone.num_blocks,
            "factors_per_block": cfg.backbone.factors_per_block,
            "stage_plan": [list(s) for s in cfg.backbone.stage_plan],
            "fm_kind": cfg.backbone.fm_kind,
            "mode": cfg.backbone.mode,
            "feature_dim": cfg.backbone.feature_dim,
        },
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def _config_from_blob(blob: bytes):
    obj = json.loads(blob.decode())
    backbone = BackboneConfig(
        num_blocks=obj["backbone"]["num_blocks"],
        factors_per_block=obj["backbone"]["factors_per_block"],
        stage_plan=tuple(tuple(s) for s in obj["backbone"]["stage_plan"]),
        fm_kind=obj["backbone"]["fm_kind"],
        mode=obj["backbone"]["mode"],
        feature_dim=obj["backbone"]["feature_dim"],
    )
    config = ConsensusConfig(
        scales=tuple(tuple(s) for s in obj["scales"]),
        backbone=backbone,
        n_id=obj["n_id"],
        pooling_assignment=tuple(obj["pooling_assignment"]),
    )
    return config, np.dtype(obj["dtype"]).type


def save_checkpoint(path, model: ConsensusNet, epochs_done: int = 0) -> None:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    blob = _config_blob(model)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", int(epochs_done)))
    params = model.parameters()
    buf.write(struct.pack("<I", len(params)))
    for name, p in params.items():
        if not np.isfinite(p.value.data).all():
            raise NumericError(f"refusing to save non-finite parameter {name}")
        encoded = name.encode()
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", _DTYPE_CODES[p.value.data.dtype],
                              p.value.data.ndim))
        for d in p.value.data.shape:
            buf.write(struct.pack("<I", d))
        le = p.value.data.dtype.newbyteorder("<")
        buf.write(p.value.data.astype(le, copy=False).tobytes())
        buf.write(p.adam_m.astype(le, copy=False).tobytes())
        buf.write(p.adam_v.astype(le, copy=False).tobytes())
        buf.write(struct.pack("<Q", p.step_count))
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated at byte {self.off}")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Rebuild the model and its optimizer state. Returns
    (model, epochs_done)."""
    raw = Path(path).read_bytes()
    if len(raw) < 32 + len(_MAGIC):
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is damaged")
    r = _Reader(payload, path)
    if r.take(4) != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = r.unpack("<I")
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (blob_len,) = r.unpack("<I")
    config, dtype = _config_from_blob(r.take(blob_len))
    (epochs_done,) = r.unpack("<I")
    (count,) = r.unpack("<I")

    model = ConsensusNet(config, Rng(0), dtype=dtype)
    params = model.parameters()
    if count != len(params):
        raise CheckpointError(
            f"{path}: holds {count} parameters, model wants {len(params)}"
        )
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        code, ndim = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        shape = tuple(r.unpack("<I")[0] for _ in range(ndim))
        p = params.get(name)
        if p is None:
            raise CheckpointError(f"{path}: unexpected parameter {name}")
        if p.value.data.shape != shape:
            raise CheckpointError(
                f"{path}: {name} has shape {shape}, model wants {p.value.data.shape}"
            )
        dt = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if shape else dt.itemsize
        def read_array():
            return np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(
                p.value.data.dtype, copy=True)
        p.value.data = read_array()
        p.adam_m = read_array()
        p.adam_v = read_array()
        (p.step_count,) = r.unpack("<Q")
    if r.off != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - r.off} trailing bytes")
    return model, epochs_done
