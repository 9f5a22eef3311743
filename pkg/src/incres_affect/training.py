"""MSE training with plain SGD + weight decay, and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"AFFCKPT1"                       8-byte magic
    u32 version                       currently 1
    u32 n, n bytes                    architecture config as UTF-8 JSON
    u32 count                         number of tensors
    count x tensor:
        u16 n, n bytes                name (UTF-8)
        u8 dtype                      1 = float64
        u8 ndim, ndim x u32           shape
        prod(shape) x f64             row-major data
    u64 step                          training step counter
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import AnnotatedFrame, DatasetSplit, frames_to_arrays, require_frames
from .errors import ArchMismatch, CorruptCheckpoint, DivergedLoss, IoFailure, MissingGradient, ShapeMismatch
from .layers import Mode
from .metrics import EvalReport, evaluate
from .nets import ArchConfig, Network, build_network
from .tensor import Rng, Tensor, accumulate_grad, make_result

log = logging.getLogger(__name__)

MAGIC = b"AFFCKPT1"
VERSION = 1
DTYPE_F64 = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 0.0001
    batch_size: int = 32
    max_steps: int = 1000
    seed: int = 0
    eval_every: int = 100
    # optional step decay; off when lr_decay_every == 0
    lr_decay_every: int = 0
    lr_decay_factor: float = 0.1
    # stop once validation RMSE on both dimensions is at or below this value
    target_rmse: float | None = None
    eval_batch_size: int = 64

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        for name in ("batch_size", "max_steps", "eval_every", "eval_batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def lr_at(self, step: int) -> float:
        if self.lr_decay_every:
            return self.learning_rate * self.lr_decay_factor ** (step // self.lr_decay_every)
        return self.learning_rate


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over every element; gradient 2 (pred - target) / size."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    size = diff.size

    def backward(g):
        if pred.requires_grad:
            accumulate_grad(pred, g * (2.0 / size) * diff)

    return make_result(np.asarray(np.mean(diff * diff)), (pred,), backward)


def sgd_step(params: dict[str, Tensor], grads: dict | None = None,
             config: TrainConfig | None = None, lr: float | None = None) -> dict[str, Tensor]:
    """In place: p <- p - lr * (g + weight_decay * p) for every given parameter.

    ``grads`` defaults to each tensor's accumulated ``.grad``. Only pass
    trainable tensors; batchnorm running statistics must not appear here.
    """
    config = config or TrainConfig()
    lr = config.learning_rate if lr is None else lr
    wd = config.weight_decay
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            raise MissingGradient(f"no gradient for parameter {name!r}")
        g = np.asarray(g, dtype=np.float64).reshape(p.shape)
        p.data = p.data - lr * (g + wd * p.data)
    return params


@dataclass
class EvalRecord:
    step: int
    train_loss: float
    report: EvalReport


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    step: int = 0
    version: int = VERSION

    @property
    def arch(self) -> ArchConfig:
        return ArchConfig.from_dict(self.config)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EvalRecord] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    best: EvalRecord | None = None
    network: Network | None = None


def snapshot(net: Network, step: int = 0) -> Checkpoint:
    return Checkpoint(net.config.to_dict(),
                      {k: t.data.copy() for k, t in net.state_tensors().items()}, step)


def apply_checkpoint(net: Network, ckpt: Checkpoint) -> Network:
    """Copy checkpoint tensors into ``net``; raises ArchMismatch if they do not fit."""
    if ckpt.config != net.config.to_dict():
        theirs = ckpt.config.get("variant")
        raise ArchMismatch(
            f"checkpoint architecture ({theirs}) differs from network ({net.variant.value}); "
            f"differing keys: {sorted(k for k in ckpt.config if ckpt.config.get(k) != net.config.to_dict().get(k))}")
    state = net.state_tensors()
    if set(state) != set(ckpt.tensors):
        raise ArchMismatch("checkpoint tensor names do not match the network")
    for name, t in state.items():
        arr = ckpt.tensors[name]
        if arr.shape != t.shape:
            raise ArchMismatch(f"{name}: checkpoint shape {arr.shape}, network {t.shape}")
        t.data = np.array(arr, dtype=np.float64, copy=True)
    return net


def network_from_checkpoint(ckpt: Checkpoint) -> Network:
    return apply_checkpoint(build_network(config=ckpt.arch), ckpt)


def evaluate_network(net: Network, frames: list[AnnotatedFrame], batch_size: int = 64,
                     bins: int = 20) -> tuple[EvalReport, np.ndarray]:
    images, labels = frames_to_arrays(frames)
    pred = net.predict(images, batch_size=batch_size, clamp=True)
    report = evaluate(pred, labels, [f.video_id for f in frames], bins=bins)
    return report, pred


def train(net: Network | str, split: DatasetSplit, config: TrainConfig | None = None,
          on_batch: Callable[[int, list[AnnotatedFrame]], None] | None = None) -> TrainResult:
    """Mini-batch SGD on ``split.train``; the best-validation state ends up in ``net``.

    ``net`` may be a built network or a variant name. Validation is scored
    every ``eval_every`` steps and after the last step; "best" means the
    lowest mean of valence and arousal RMSE.
    """
    config = config or TrainConfig()
    if not isinstance(net, Network):
        net = build_network(net)
    train_frames = require_frames(split.train)
    images, labels = frames_to_arrays(train_frames)
    rng = Rng(config.seed)
    shuffle_rng, dropout_rng = rng.spawn(), rng.spawn()
    params = net.named_parameters()
    result = TrainResult(snapshot(net))
    best_score = math.inf
    order: np.ndarray = np.empty(0, dtype=np.int64)
    cursor = 0
    recent: list[float] = []

    for step in range(1, config.max_steps + 1):
        if cursor >= len(order):
            order = shuffle_rng.permutation(len(train_frames))
            cursor = 0
        idx = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        if on_batch is not None:
            on_batch(step, [train_frames[i] for i in idx])

        net.zero_grad()
        pred = net.forward(Tensor(images[idx]), Mode.TRAIN, dropout_rng)
        loss = mse_loss(pred, labels[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergedLoss(f"loss became {value} at step {step} (lr={config.lr_at(step)})")
        loss.backward()
        sgd_step(params, config=config, lr=config.lr_at(step - 1))
        result.losses.append(value)
        recent.append(value)
        result.steps = step

        if split.validation and (step % config.eval_every == 0 or step == config.max_steps):
            report, _ = evaluate_network(net, split.validation, config.eval_batch_size)
            record = EvalRecord(step, float(np.mean(recent)), report)
            recent = []
            result.history.append(record)
            m = report.metrics
            log.info("step %d loss %.5f val rmse %.4f/%.4f cc %s/%s ccc %s/%s sagr %.3f/%.3f",
                     step, record.train_loss, m["valence"]["rmse"], m["arousal"]["rmse"],
                     _f(m["valence"]["cc"]), _f(m["arousal"]["cc"]),
                     _f(m["valence"]["ccc"]), _f(m["arousal"]["ccc"]),
                     m["valence"]["sagr"], m["arousal"]["sagr"])
            if report.mean_rmse() < best_score:
                best_score = report.mean_rmse()
                result.best = record
                result.checkpoint = snapshot(net, step)
            if config.target_rmse is not None and max(
                    m["valence"]["rmse"], m["arousal"]["rmse"]) <= config.target_rmse:
                break

    if not split.validation:
        result.checkpoint = snapshot(net, result.steps)
    apply_checkpoint(net, result.checkpoint)
    result.network = net
    return result


def _f(v):
    return "nan" if v is None else f"{v:.4f}"


# Checkpoint I/O --------------------------------------------------------------

def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    blob = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", DTYPE_F64, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    parts.append(struct.pack("<Q", ckpt.step))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpoint(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpoint("bad magic; not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
    (blob_len,) = r.unpack("<I")
    try:
        config = json.loads(r.take(blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable config blob: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="replace")
        dtype, ndim = r.unpack("<BB")
        if dtype != DTYPE_F64:
            raise CorruptCheckpoint(f"{name}: unknown dtype code {dtype}")
        shape = r.unpack(f"<{ndim}I")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(nbytes), dtype="<f8").reshape(shape).astype(np.float64)
    (step,) = r.unpack("<Q")
    if r.pos != len(buf):
        raise CorruptCheckpoint(f"{len(buf) - r.pos} unexpected trailing bytes")
    return Checkpoint(config, tensors, step, version)


def save_checkpoint(path, state: Network | Checkpoint, config: ArchConfig | None = None,
                    step: int = 0) -> Path:
    """Write a network (or an existing Checkpoint) to ``path``."""
    if isinstance(state, Network):
        ckpt = snapshot(state, step)
        if config is not None:
            ckpt.config = config.to_dict()
    else:
        ckpt = state
    path = Path(path)
    try:
        path.write_bytes(encode_checkpoint(ckpt))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(buf)
