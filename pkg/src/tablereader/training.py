"""Training: dataset split, epoch sampling, SGD with momentum, the
two-phase learning-rate schedule, and checkpoint persistence.

Checkpoint file layout (little endian): magic "CTRW", uint32 version,
uint32 length + UTF-8 JSON header (network descriptor plus training
state), the per-layer float64 weight arrays in descriptor order, the
velocity arrays likewise, and a trailing uint32 CRC32 of everything
before it.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .ctc import ctc_gradient
from .netcore import NetworkSpec, WeightStore, network_backward, network_forward
from .preproc import Raster, load_png

MAGIC = b"CTRW"
VERSION = 1


class CheckpointFormatError(ValueError):
    """Raised for unreadable or corrupted checkpoint files."""


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.9
    main_lr: float = 0.002
    post_lr: float = 0.001
    main_epochs: int = 0
    post_epochs: int = 0
    samples_per_epoch: int = 20000
    seed: int = 0
    precision: str = "double"
    batch_size: int = 16
    grad_clip: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.main_lr <= 0 or self.post_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.main_epochs < 0 or self.post_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64


@dataclass
class SplitManifest:
    train: list
    validation: list
    dropped: int


def split_dataset(entries, ratio: float = 10.0, seed: int = 0) -> SplitManifest:
    """Deterministic seeded shuffle, then partition so that
    train:validation is `ratio`:1.  Entries without a usable image or
    transcript are dropped first and counted."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    usable = [e for e in entries if e.usable_for_training()]
    dropped = len(entries) - len(usable)
    order = np.random.default_rng(seed).permutation(len(usable))
    shuffled = [usable[i] for i in order]
    n_val = int(round(len(shuffled) / (ratio + 1.0)))
    return SplitManifest(shuffled[n_val:], shuffled[:n_val], dropped)


def epoch_sample(train_set, k: int, epoch_index: int, seed: int) -> list:
    """k entries drawn without replacement from a shuffle seeded by
    (seed, epoch index); the whole set when k covers it."""
    rng = np.random.default_rng((seed, epoch_index))
    order = rng.permutation(len(train_set))
    picked = order if k >= len(train_set) else order[:k]
    return [train_set[i] for i in picked]


def sgd_momentum_step(weights: np.ndarray, velocity: np.ndarray,
                      gradient: np.ndarray, lr: float, momentum: float) -> None:
    """In-place: velocity <- momentum*velocity - lr*gradient;
    weights <- weights + velocity."""
    velocity *= momentum
    velocity -= lr * gradient
    weights += velocity


def apply_sgd_step(store: WeightStore, grads: dict, lr: float, momentum: float) -> None:
    for name in store.layer_names:
        sgd_momentum_step(store.data[name], store.velocity[name],
                          grads[name].astype(store.dtype, copy=False), lr, momentum)


@dataclass
class Checkpoint:
    spec: NetworkSpec
    store: WeightStore
    epoch: int = 0
    seed: int = 0
    precision: str = "double"
    history: list = field(default_factory=list)  # [epoch, phase, lr, train, val]


def _header_dict(cp: Checkpoint) -> dict:
    return {
        "spec": cp.spec.to_dict(),
        "epoch": cp.epoch,
        "seed": cp.seed,
        "precision": cp.precision,
        "history": cp.history,
    }


def save_checkpoint(cp: Checkpoint, path) -> None:
    header = json.dumps(_header_dict(cp), sort_keys=True, separators=(",", ":")).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(header))
    blob += header
    for name in cp.store.layer_names:
        blob += cp.store.data[name].astype("<f8").tobytes()
    for name in cp.store.layer_names:
        blob += cp.store.velocity[name].astype("<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointFormatError("checksum mismatch, file corrupted")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode())
    spec = NetworkSpec.from_dict(header["spec"])
    precision = header.get("precision", "double")
    dtype = np.float32 if precision == "single" else np.float64
    store = WeightStore(spec, dtype)
    off = 12 + hlen
    for name in store.layer_names:
        n = store.data[name].size
        store.data[name][:] = np.frombuffer(blob, "<f8", n, off).astype(dtype)
        off += 8 * n
    for name in store.layer_names:
        n = store.velocity[name].size
        store.velocity[name][:] = np.frombuffer(blob, "<f8", n, off).astype(dtype)
        off += 8 * n
    if off != len(blob) - 4:
        raise CheckpointFormatError("truncated or oversized weight payload")
    return Checkpoint(spec, store, header["epoch"], header["seed"],
                      precision, [list(h) for h in header["history"]])


class _SampleCache:
    """Loads and encodes training samples once per path."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.rasters: dict[str, Raster] = {}
        self.labels: dict[str, np.ndarray] = {}

    def get(self, entry):
        r = self.rasters.get(entry.image)
        if r is None:
            r = load_png(entry.image)
            self.rasters[entry.image] = r
        labels = self.labels.get(entry.image)
        if labels is None:
            labels = self.spec.alphabet.encode(entry.transcript)
            self.labels[entry.image] = labels
        return r, labels


def _mean_validation_loss(spec, store, cache, validation) -> float:
    total = 0.0
    n = 0
    for entry in validation:
        r, labels = cache.get(entry)
        nll = ctc_neg_log_prob(network_forward(spec, store, r), labels)
        if np.isfinite(nll):
            total += nll
            n += 1
    return total / n if n else float("nan")


def train(
    config: TrainConfig,
    split: SplitManifest,
    spec: NetworkSpec,
    checkpoint_dir=None,
    log_lines: list | None = None,
) -> Checkpoint:
    """Two-phase schedule: main_epochs at main_lr, then post_epochs at
    post_lr.  Each epoch draws samples_per_epoch entries, averages CTC
    gradients over mini-batches, applies momentum SGD, evaluates the
    validation loss, and (when checkpoint_dir is set) persists a
    checkpoint.  Infeasible samples are skipped; a non-finite loss
    aborts, returning the last completed epoch's state."""
    spec = replace(spec, seed=config.seed if config.seed else spec.seed)
    store = WeightStore.create(spec, config.dtype)
    cache = _SampleCache(spec)
    cp = Checkpoint(spec, store, 0, config.seed, config.precision, [])

    val0 = _mean_validation_loss(spec, store, cache, split.validation)
    cp.history.append([0, "init", 0.0, None, val0])
    _log(log_lines, 0, "init", 0.0, None, val0)

    schedule = [("main", config.main_lr)] * config.main_epochs
    schedule += [("post", config.post_lr)] * config.post_epochs
    for epoch, (phase, lr) in enumerate(schedule, start=1):
        sample = epoch_sample(split.train, config.samples_per_epoch, epoch, config.seed)
        loss_sum = 0.0
        n_ok = 0
        for start in range(0, len(sample), config.batch_size):
            batch = sample[start : start + config.batch_size]
            grads = store.zero_grads()
            n_batch = 0
            for entry in batch:
                r, labels = cache.get(entry)
                out, trace = network_forward(spec, store, r, want_trace=True)
                res = ctc_gradient(out, labels)
                if not res.feasible:
                    continue
                if not np.isfinite(res.neg_log_prob):
                    return cp  # diverged; keep last good state
                g = network_backward(spec, store, r, res.d_logits, trace)
                for name in store.layer_names:
                    grads[name] += g[name]
                loss_sum += res.neg_log_prob
                n_ok += 1
                n_batch += 1
            if n_batch == 0:
                continue
            for name in store.layer_names:
                grads[name] /= n_batch
            if config.grad_clip > 0:
                norm = np.sqrt(sum(float(np.dot(g, g)) for g in grads.values()))
                if norm > config.grad_clip:
                    for name in store.layer_names:
                        grads[name] *= config.grad_clip / norm
            apply_sgd_step(store, grads, lr, config.momentum)
        train_loss = loss_sum / n_ok if n_ok else float("nan")
        val_loss = _mean_validation_loss(spec, store, cache, split.validation)
        if not np.isfinite(train_loss) and n_ok:
            return cp
        cp = Checkpoint(spec, store, epoch, config.seed, config.precision, cp.history)
        cp.history.append([epoch, phase, lr, train_loss, val_loss])
        _log(log_lines, epoch, phase, lr, train_loss, val_loss)
        if checkpoint_dir is not None:
            save_checkpoint(cp, f"{checkpoint_dir}/epoch{epoch:03d}.ckpt")
    return cp


def _log(log_lines, epoch, phase, lr, train_loss, val_loss) -> None:
    if log_lines is None:
        return
    log_lines.append(format_log_line(epoch, phase, lr, train_loss, val_loss))


def format_log_line(epoch, phase, lr, train_loss, val_loss) -> str:
    def num(x):
        return "-" if x is None else f"{x:.6f}"

    return f"{epoch}\t{phase}\t{num(lr)}\t{num(train_loss)}\t{num(val_loss)}"
