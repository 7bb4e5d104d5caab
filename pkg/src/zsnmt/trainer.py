"""Adam with inverse-square-root warmup, token-budget batching, checkpoint averaging."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, NonFiniteError
from .model import Batch, ModelConfig, NMTModel, make_batch
from .tensor import Tensor
from .vocab import TrainingInstance

log = logging.getLogger(__name__)


def lr_at(step: int, d: int, warmup: int, lr_scale: float) -> float:
    """``lr_scale * d**-0.5 * min(step**-0.5, step * warmup**-1.5)``."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return lr_scale * d ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class TrainConfig:
    max_steps: int = 3000
    batch_tokens: int = 2000
    warmup: int = 4000
    lr_scale: float = 0.5
    label_smoothing: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    clip_norm: float = 1.0
    checkpoint_every: int = 500
    keep_checkpoints: int = 5
    log_every: int = 50
    seed: int = 1

    def __post_init__(self):
        for name in ("max_steps", "batch_tokens", "warmup", "checkpoint_every", "keep_checkpoints", "log_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr_scale < 0:
            raise ConfigError("lr_scale must be non-negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")


class Adam:
    """Adam with bias correction and optional global-norm clipping."""

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.98, eps=1e-9, clip_norm: float | None = 1.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def global_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(np.square(p.grad, dtype=np.float64)))
        return math.sqrt(total)

    def update(self, lr: float) -> float:
        """Apply one step at learning rate ``lr``; returns the pre-clip gradient norm."""
        norm = self.global_norm()
        scale = 1.0
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif scale != 1.0:
                g = g * scale
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            if lr != 0.0:
                p.data -= update.astype(p.data.dtype, copy=False)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], step: int):
        for k in self.params:
            if f"adam.m.{k}" in arrays:
                self.m[k] = arrays[f"adam.m.{k}"].astype(self.m[k].dtype)
                self.v[k] = arrays[f"adam.v.{k}"].astype(self.v[k].dtype)
        self.step = step


def token_batches(instances: Sequence[TrainingInstance], budget: int, rng: np.random.Generator,
                  pool_batches: int = 50) -> Iterator[list[TrainingInstance]]:
    """Endless stream of batches holding about ``budget`` target tokens each.

    A batch is closed as soon as its target-token count reaches the budget,
    so it overshoots by less than one sentence. Instances are shuffled, then
    length-sorted inside pools to limit padding.
    """
    if not instances:
        raise ConfigError("no training instances")
    while True:
        order = rng.permutation(len(instances))
        avg = max(1.0, float(np.mean([len(instances[i].tgt) for i in order[:1000]])))
        pool = max(1, int(pool_batches * budget / avg))
        for start in range(0, len(order), pool):
            chunk = sorted(order[start:start + pool], key=lambda i: (len(instances[i].tgt), len(instances[i].src)))
            batches, cur, tokens = [], [], 0
            for i in chunk:
                cur.append(instances[i])
                tokens += len(instances[i].tgt)
                if tokens >= budget:
                    batches.append(cur)
                    cur, tokens = [], 0
            if cur:
                batches.append(cur)
            for j in rng.permutation(len(batches)):
                yield batches[j]


def train_step(batch: Batch, model: NMTModel, opt: Adam, lr: float, label_smoothing: float = 0.1,
               rng: np.random.Generator | None = None) -> float:
    """Forward, smoothed cross-entropy, backward and one Adam update. Returns the loss."""
    if batch.size == 0:
        raise ConfigError("empty batch")
    opt.zero_grad()
    loss = model.loss(batch, label_smoothing, training=True, rng=rng)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value} at step {opt.step + 1} "
                             f"(batch of {batch.size} sentences, {batch.target_tokens} target tokens)")
    loss.backward()
    opt.update(lr)
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)):
            raise NonFiniteError(f"non-finite parameter {name} after step {opt.step} (lr={lr:.3g})")
    return value


class JsonlLog:
    """Line-delimited JSON records; a no-op without a path."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, **record):
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class Trainer:
    model: NMTModel
    cfg: TrainConfig
    out_dir: Path | None = None
    opt: Adam = field(init=False)
    checkpoints: list[Path] = field(init=False, default_factory=list)

    def __post_init__(self):
        self.opt = Adam(self.model.params, self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps, self.cfg.clip_norm)
        self.rng = np.random.default_rng(self.cfg.seed)
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log = JsonlLog(self.out_dir / "train_log.jsonl" if self.out_dir else None)

    def lr(self, step: int) -> float:
        return lr_at(step, self.model.config.d_model, self.cfg.warmup, self.cfg.lr_scale)

    def step_on(self, batch: Batch) -> float:
        return train_step(batch, self.model, self.opt, self.lr(self.opt.step + 1), self.cfg.label_smoothing, self.rng)

    def train(self, instances: Sequence[TrainingInstance], steps: int | None = None,
              callback: Callable[[int, float], None] | None = None) -> list[float]:
        steps = self.cfg.max_steps if steps is None else steps
        stream = token_batches(instances, self.cfg.batch_tokens, self.rng)
        losses = []
        t0, tok = time.perf_counter(), 0
        for _ in range(steps):
            batch = make_batch(next(stream))
            loss = self.step_on(batch)
            losses.append(loss)
            tok += batch.target_tokens
            step = self.opt.step
            if step % self.cfg.log_every == 0:
                elapsed = time.perf_counter() - t0
                self.log.write(step=step, loss=round(loss, 5), lr=self.lr(step), tokens_per_sec=round(tok / elapsed, 1))
                log.info("step %d loss %.4f", step, loss)
                t0, tok = time.perf_counter(), 0
            if self.out_dir is not None and step % self.cfg.checkpoint_every == 0:
                self.save(self.out_dir / f"ckpt.{step}.bin")
            if callback is not None:
                callback(step, loss)
        return losses

    def save(self, path) -> Path:
        arrays = dict(self.model.state_arrays())
        arrays.update(self.opt.state_arrays())
        save_checkpoint(path, Checkpoint(self.model.config.to_dict(), arrays, self.opt.step))
        self.checkpoints.append(Path(path))
        while len(self.checkpoints) > self.cfg.keep_checkpoints:
            old = self.checkpoints.pop(0)
            old.unlink(missing_ok=True)
        return Path(path)

    def restore(self, ckpt: Checkpoint):
        self.model.load_arrays(ckpt.tensors)
        self.opt.load_arrays(ckpt.tensors, ckpt.step)


def average_checkpoints(paths: Sequence) -> Checkpoint:
    """Arithmetic mean of every model tensor over ``paths``; optimizer state is dropped."""
    if not paths:
        raise CheckpointError("no checkpoints to average")
    ckpts = [load_checkpoint(p) for p in paths]
    sig = ModelConfig.from_dict(ckpts[0].config).signature()
    for p, c in zip(paths, ckpts):
        if ModelConfig.from_dict(c.config).signature() != sig:
            raise CheckpointError(f"{p}: model configuration differs from {paths[0]}")
    names = [n for n in ckpts[0].tensors if not n.startswith("adam.")]
    avg = {}
    for n in names:
        acc = np.zeros(ckpts[0].tensors[n].shape, dtype=np.float64)
        for c in ckpts:
            acc += c.tensors[n]
        avg[n] = (acc / len(ckpts)).astype(np.float32)
    return Checkpoint(ckpts[0].config, avg, max(c.step for c in ckpts), {"averaged_from": [Path(p).name for p in paths]})


def model_from_checkpoint(ckpt: Checkpoint, dtype: str | None = None) -> NMTModel:
    cfg_dict = dict(ckpt.config)
    if dtype:
        cfg_dict["dtype"] = dtype
    config = ModelConfig.from_dict(cfg_dict)
    model = NMTModel(config)
    model.load_arrays(ckpt.tensors)
    return model


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
