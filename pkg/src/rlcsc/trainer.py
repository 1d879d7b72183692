"""SGD training of RL-CSC on patch pairs, plus checkpoints and config files.

Loss is the mean over batch and pixels of ``(residual(I_y) + I_y - I_x)^2``
(or ``(net(I_y) - I_x)^2`` with the skip connection disabled).  Each step
clips raw gradients elementwise, adds weight decay (not on theta), applies
momentum, and projects theta back onto theta >= 0.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import PatchSet
from .errors import CheckpointError, ConfigError, DivergenceError
from .model import LAYER_NAMES, ModelConfig, RlcscParams, residual
from .rng import generator
from .tensor import Tape, Tensor, add, mse

log = logging.getLogger(__name__)

CKPT_MAGIC = b"RLCSC1"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr0: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 10
    epochs: int = 35
    clip_theta: float = 0.4
    adjustable_clip: bool = False
    seed: int = 0
    residual_enabled: bool = True
    checkpoint_every: int = 1
    max_steps: int = 0  # 0 = no cap; otherwise stop after this many steps in total

    def __post_init__(self):
        for name in ("batch_size", "lr_decay_every", "epochs", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr0 < 0 or self.lr_decay_factor <= 0:
            raise ConfigError("learning rate and decay factor must be positive")
        if not self.clip_theta > 0:
            raise ConfigError(f"clip_theta must be > 0, got {self.clip_theta}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")


def _parse_value(raw: str, kind, key: str, lineno: int):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None


def parse_config(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Flat ``key = value`` lines with ``#`` comments, keys named as in TrainConfig."""
    kinds = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    kinds = {k: {"int": int, "float": float, "bool": bool}[v] if isinstance(v, str) else v
             for k, v in kinds.items()}
    values = dataclasses.asdict(base or TrainConfig())
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw, kinds[key], key, lineno)
    return TrainConfig(**values)


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())


# ---------------------------------------------------------------------------
# init, loss, optimizer
# ---------------------------------------------------------------------------


def he_init(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> RlcscParams:
    """Conv weights ~ N(0, 2 / (out_channels * k * k)); theta = 0."""
    arrays = []
    for name, shp in cfg.shapes().items():
        if name == "theta":
            arrays.append(np.zeros(shp, dtype=dtype))
            continue
        fan_out = shp[0] * shp[2] * shp[3]
        arrays.append((rng.standard_normal(shp) * math.sqrt(2.0 / fan_out)).astype(dtype))
    kw = {n: Tensor(a, name=n) for n, a in zip(LAYER_NAMES, arrays)}
    return RlcscParams(K=cfg.K, **kw)


def predict(params: RlcscParams, I_y: Tensor, residual_enabled: bool = True) -> Tensor:
    r = residual(params, I_y)
    return add(I_y, r) if residual_enabled else r


def loss(params: RlcscParams, I_y, I_x, residual_enabled: bool = True) -> Tensor:
    I_y = I_y if isinstance(I_y, Tensor) else Tensor(I_y)
    I_x = I_x if isinstance(I_x, Tensor) else Tensor(I_x)
    if I_y.size == 0:
        raise ValueError("empty batch")
    return mse(predict(params, I_y, residual_enabled), I_x)


def loss_and_grads(params: RlcscParams, I_y, I_x, residual_enabled: bool = True):
    p = params.trainable()
    with Tape() as tape:
        value = loss(p, I_y, I_x, residual_enabled)
    return value.item(), tape.gradient(value, p.tensors())


@dataclass
class SgdState:
    velocity: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: RlcscParams) -> "SgdState":
        return cls([np.zeros(t.shape, dtype=t.dtype) for t in params.tensors()])


def clip_gradient(g: np.ndarray, bound: float) -> np.ndarray:
    return np.clip(g, -bound, bound)


def sgd_step(params: RlcscParams, grads, state: SgdState, lr: float, cfg: TrainConfig) -> RlcscParams:
    """One momentum-SGD update; returns new params and advances ``state`` in place."""
    bound = cfg.clip_theta / lr if cfg.adjustable_clip and lr > 0 else cfg.clip_theta
    new = []
    for i, (name, t) in enumerate(params.named()):
        g = np.asarray(grads[i])
        if g.shape != t.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {t.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name} at step {state.step}")
        w = t.data
        g = clip_gradient(g, bound)
        if name != "theta" and cfg.weight_decay:
            g = g + w.dtype.type(cfg.weight_decay) * w
        v = w.dtype.type(cfg.momentum) * state.velocity[i] + g
        state.velocity[i] = v
        w = w - w.dtype.type(lr) * v
        if name == "theta":
            w = np.maximum(w, 0)
        new.append(w.astype(t.dtype, copy=False))
    state.step += 1
    return params.with_tensors(new)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 / cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: RlcscParams
    epoch: int
    state: SgdState

    def to_bytes(self) -> bytes:
        cfg = self.params.config
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC)
        buf.write(struct.pack("<I", CKPT_VERSION))
        buf.write(struct.pack("<5I", cfg.n_f, cfg.m_f, cfg.s, cfg.c_img, cfg.K))
        buf.write(struct.pack("<iQ", self.epoch, self.state.step))
        for t in self.params.tensors():
            buf.write(t.data.astype("<f4").tobytes())
        for v in self.state.velocity:
            buf.write(np.asarray(v).astype("<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:6] != CKPT_MAGIC:
            raise CheckpointError("not an RL-CSC checkpoint (bad magic)")
        (version,) = struct.unpack_from("<I", raw, 6)
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 10
        n_f, m_f, s, c_img, K = struct.unpack_from("<5I", raw, off)
        off += 20
        epoch, step = struct.unpack_from("<iQ", raw, off)
        off += 12
        cfg = ModelConfig(n_f=n_f, m_f=m_f, s=s, c_img=c_img, K=K)
        shapes = list(cfg.shapes().values())
        need = off + 2 * 4 * sum(int(np.prod(s)) for s in shapes)
        if len(raw) != need:
            raise CheckpointError(f"checkpoint size {len(raw)} != expected {need}")

        def take(shp):
            nonlocal off
            n = int(np.prod(shp))
            a = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shp).astype(np.float32)
            off += 4 * n
            return a

        arrays = [take(shp) for shp in shapes]
        velocity = [take(shp) for shp in shapes]
        kw = {n: Tensor(a, name=n) for n, a in zip(LAYER_NAMES, arrays)}
        return cls(RlcscParams(K=K, **kw), epoch, SgdState(velocity, step))

    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as f:
            f.write(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(raw)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TraceRow:
    epoch: int
    step: int
    loss: float
    lr: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[TraceRow] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)


def trace_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["epoch", "step", "loss", "lr"])
    for r in rows:
        wr.writerow([r.epoch, r.step, repr(r.loss), repr(r.lr)])
    return buf.getvalue()


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return generator(seed, "shuffle", epoch).permutation(n)


def dataset_loss(params: RlcscParams, patches: PatchSet, residual_enabled: bool = True,
                 batch: int = 256) -> float:
    """Mean loss over a whole patch set, evaluated in fixed-size chunks."""
    total, count = 0.0, 0
    for i in range(0, len(patches), batch):
        I_y, I_x = patches.ilr[i : i + batch], patches.hr[i : i + batch]
        total += loss(params, I_y, I_x, residual_enabled).item() * I_y.size
        count += I_y.size
    return total / count


def train(
    patches: PatchSet,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sink: Optional[Callable[[str, object], None]] = None,
    resume: Optional[Checkpoint] = None,
    out_dir: Optional[Path] = None,
) -> TrainResult:
    """Run SGD for ``train_cfg.epochs`` epochs (or ``max_steps`` steps).

    ``sink(kind, payload)`` receives ``("step", TraceRow)``, ``("epoch",
    (epoch, lr, mean_loss))`` and ``("checkpoint", path)`` events.  With
    ``out_dir`` set, checkpoints are written atomically as
    ``epoch_XXXX.ckpt`` plus ``last.ckpt``.  A non-finite loss raises
    :class:`DivergenceError` after keeping the last good checkpoint on disk.
    """
    if len(patches) == 0:
        raise ValueError("empty patch set")
    emit = sink or (lambda kind, payload: None)
    if resume is not None:
        params, state, start = resume.params, resume.state, resume.epoch + 1
        if params.config != model_cfg:
            raise ConfigError(f"checkpoint model {params.config} != requested {model_cfg}")
    else:
        params = he_init(model_cfg, generator(train_cfg.seed, "init"))
        state = SgdState.zeros_like(params)
        start = 0
    result = TrainResult(Checkpoint(params, start - 1, state))
    n = len(patches)
    bs = train_cfg.batch_size
    for epoch in range(start, train_cfg.epochs):
        lr = lr_schedule(epoch, train_cfg)
        order = epoch_order(n, train_cfg.seed, epoch)
        losses = []
        for b in range(0, n, bs):
            if train_cfg.max_steps and state.step >= train_cfg.max_steps:
                break
            idx = order[b : b + bs]
            # overflow is detected below and reported as divergence, not warned about
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = loss_and_grads(params, patches.ilr[idx], patches.hr[idx],
                                              train_cfg.residual_enabled)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {state.step}")
            row = TraceRow(epoch, state.step, value, lr)
            params = sgd_step(params, grads, state, lr, train_cfg)
            losses.append(value)
            result.trace.append(row)
            emit("step", row)
        if not losses:
            break
        mean = float(np.mean(losses))
        result.epoch_means.append(mean)
        result.checkpoint = Checkpoint(params, epoch, SgdState([v.copy() for v in state.velocity], state.step))
        emit("epoch", (epoch, lr, mean))
        if out_dir is not None and ((epoch + 1) % train_cfg.checkpoint_every == 0
                                    or epoch == train_cfg.epochs - 1):
            path = Path(out_dir) / f"epoch_{epoch:04d}.ckpt"
            result.checkpoint.save(path)
            result.checkpoint.save(Path(out_dir) / "last.ckpt")
            emit("checkpoint", path)
    return result
