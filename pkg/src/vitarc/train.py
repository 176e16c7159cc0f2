"""Supervised training: Adam on teacher-forced cross-entropy, plus checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .model import (
    Batch,
    ModelConfig,
    Params,
    init_params,
    loss_fn,
    param_shapes,
)
from .segmentation import segment
from .tasks import Sample
from .tensor import Tensor
from .tokenizer import TokenizedGrid, encode

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainResult",
    "adam_step",
    "init_params",
    "encode_samples",
    "train_loop",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_log",
]


class TrainError(RuntimeError):
    pass


class EmptyDataset(TrainError):
    pass


class MissingGrad(TrainError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 8
    max_steps: int = 1000
    seed: int = 0
    log_every: int = 50
    checkpoint_path: Optional[str] = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Params, state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update using each parameter's `.grad`."""
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise MissingGrad(f"parameter {name} has no gradient")
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype, copy=False)


def encode_samples(cfg: ModelConfig, samples: Sequence[Sample]) -> tuple[list[TokenizedGrid], list[TokenizedGrid]]:
    """Source/target token grids for each sample; sources carry object indices under OPE."""
    srcs, tgts = [], []
    for s in samples:
        src = encode(s.input, cfg.layout)
        if cfg.scheme.value == "ope_ape2d":
            src = segment(src, s.input, cfg.connectivity, cfg.background)
        srcs.append(src)
        tgts.append(encode(s.output, cfg.layout))
    return srcs, tgts


@dataclass
class TrainResult:
    params: Params
    losses: list[float]
    steps: int
    log_rows: list[tuple] = field(default_factory=list)


class _BatchStream:
    """Deterministic minibatches: one seeded permutation per epoch, read in order."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n, self.batch_size, self.seed = n, batch_size, seed
        self.epoch = 0
        self.order = self._perm()
        self.pos = 0

    def _perm(self) -> np.ndarray:
        return np.random.default_rng([self.seed, self.epoch]).permutation(self.n)

    def next(self) -> np.ndarray:
        out = []
        while len(out) < self.batch_size:
            if self.pos == self.n:
                self.epoch += 1
                self.order, self.pos = self._perm(), 0
            take = min(self.batch_size - len(out), self.n - self.pos)
            out.extend(self.order[self.pos:self.pos + take])
            self.pos += take
        return np.array(out)


def train_loop(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    samples: Sequence[Sample],
    params: Optional[Params] = None,
    callback: Optional[Callable[[int, Params], bool]] = None,
    callback_every: int = 0,
    record_throughput: bool = False,
) -> TrainResult:
    """Train on `samples` for `max_steps` Adam steps.

    `callback(step, params)` runs every `callback_every` steps; returning
    True stops training early. Log rows are (step, loss, tokens/s); the
    throughput column stays empty unless `record_throughput` is set, which
    keeps the log byte-reproducible by default.
    """
    if not samples:
        raise EmptyDataset("training set is empty")
    if params is None:
        params = init_params(model_cfg, train_cfg.seed)
    srcs, tgts = encode_samples(model_cfg, samples)
    src_tok = np.stack([s.tokens for s in srcs])
    src_obj = np.stack([s.obj for s in srcs]) if srcs[0].obj is not None else None
    tgt_tok = np.stack([t.tokens for t in tgts])

    stream = _BatchStream(len(samples), train_cfg.batch_size, train_cfg.seed)
    state = AdamState()
    losses: list[float] = []
    rows: list[tuple] = []
    tick = time.perf_counter()
    tokens_since = 0
    step = 0
    for step in range(1, train_cfg.max_steps + 1):
        idx = stream.next()
        batch = Batch(src_tok[idx], src_obj[idx] if src_obj is not None else None, tgt_tok[idx])
        for p in params.values():
            p.zero_grad()
        loss = loss_fn(params, model_cfg, batch)
        loss.backward()
        adam_step(params, state, train_cfg)
        value = loss.item()
        losses.append(value)
        tokens_since += batch.tgt.size
        if step % train_cfg.log_every == 0 or step == train_cfg.max_steps:
            rate = ""
            if record_throughput:
                now = time.perf_counter()
                rate = f"{tokens_since / max(now - tick, 1e-9):.1f}"
                tick, tokens_since = now, 0
            rows.append((step, f"{value:.10g}", rate))
            log.info("step %d loss %.6f", step, value)
        if train_cfg.checkpoint_path and train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
            save_checkpoint(params, model_cfg, train_cfg.checkpoint_path)
        if callback is not None and callback_every and step % callback_every == 0:
            if callback(step, params):
                if not rows or rows[-1][0] != step:
                    rows.append((step, f"{value:.10g}", ""))
                break
    if train_cfg.checkpoint_path:
        save_checkpoint(params, model_cfg, train_cfg.checkpoint_path)
    return TrainResult(params, losses, step, rows)


def write_loss_log(rows: Sequence[tuple], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "tokens_per_s"])
        w.writerows(rows)


# -- checkpoints -----------------------------------------------------------------
#
# Layout (little-endian):
#   magic b"VITARCCK" | u32 version | u32 len + UTF-8 JSON ModelConfig | u32 count
#   then per array: u16 len + UTF-8 name | u8 ndim | ndim x u32 dims | f64 data

MAGIC = b"VITARCCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointIOError(CheckpointError, OSError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


def checkpoint_bytes(params: Params, cfg: ModelConfig) -> bytes:
    header = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header, struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", t.data.ndim) + struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(params: Params, cfg: ModelConfig, path) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(params, cfg))
    except OSError as e:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {e}") from e


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointIOError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> tuple[ModelConfig, Params]:
    """Read a checkpoint, validating every array against the stored config.

    With `expected`, the stored parameter shapes must also match that config.
    """
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(buf, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointIOError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(hlen)))
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointIOError(f"{path}: bad config header: {e}") from e
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape)
    if r.pos != len(buf):
        raise CheckpointIOError(f"{path}: {len(buf) - r.pos} trailing bytes")

    for want_cfg in [cfg] + ([expected] if expected is not None else []):
        want = param_shapes(want_cfg)
        if set(want) != set(arrays):
            raise ShapeMismatch(f"{path}: parameter set does not match the model config")
        for name, shape in want.items():
            if arrays[name].shape != shape:
                raise ShapeMismatch(f"{path}: {name} has shape {arrays[name].shape}, expected {shape}")
    params = {
        name: Tensor(arrays[name].astype(cfg.np_dtype), requires_grad=True, name=name)
        for name in param_shapes(cfg)
    }
    return cfg, params

