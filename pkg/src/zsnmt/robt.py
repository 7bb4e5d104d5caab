"""Random online backtranslation (ROBT) finetuning.

Every step samples ``B`` training instances. Each target sentence ``y`` is
greedily back-translated by the live model into a random intermediate
language ``t' != t``. The synthetic pair ``(x', y, t)`` is appended, and the
model takes one optimizer step on all ``2B`` instances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .decoding import greedy_decode
from .errors import ConfigError
from .model import NMTModel, make_batch
from .trainer import JsonlLog, Trainer
from .vocab import TrainingInstance

log = logging.getLogger(__name__)


@dataclass
class RobtConfig:
    max_steps: int = 2000
    batch_size: int = 128
    languages: tuple[int, ...] | None = None   # language indices; None means every language
    eval_every: int = 100
    patience: int = 3
    min_improvement: float = 0.005            # accuracy is a fraction, so 0.5 points
    seed: int = 1

    def __post_init__(self):
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.languages is not None and len(set(self.languages)) < 2:
            raise ConfigError("ROBT needs at least two languages to sample from")


@dataclass
class AugmentedInstance:
    source: list[int]        # back-translated x'
    target: list[int]        # original y (EOS-terminated)
    lang: int                # original t
    intermediate: int        # sampled t'

    def as_training(self) -> TrainingInstance:
        return TrainingInstance(list(self.source), list(self.target), self.lang, self.intermediate)


def sample_intermediate(t: int, languages: Sequence[int], rng: np.random.Generator) -> int:
    """Uniform draw from ``languages`` without ``t``."""
    pool = [l for l in languages if l != t]
    if len(set(languages)) < 2 or not pool:
        raise ConfigError("intermediate-language sampling needs at least two languages")
    return int(pool[rng.integers(len(pool))])


def backtranslation_cap(target_len: int) -> int:
    return 2 * target_len + 8


def greedy_batch_backtranslate(model: NMTModel, targets: Sequence[Sequence[int]],
                               intermediates: Sequence[int]) -> list[list[int]]:
    """Greedy ``M([t', y])`` for every (y, t') jointly; ``y`` excludes EOS."""
    caps = [backtranslation_cap(len(y)) for y in targets]
    out = greedy_decode(model, [list(y) for y in targets], list(intermediates), max_lens=caps)
    empty = sum(1 for o in out if not o)
    if empty:
        log.info("backtranslation produced %d empty sentences out of %d", empty, len(out))
    return out


def augment(batch: Sequence[TrainingInstance], model: NMTModel, languages: Sequence[int],
            rng: np.random.Generator, eos: int) -> list[AugmentedInstance]:
    """One augmented instance per element of ``batch``; inputs are left untouched."""
    inter = [sample_intermediate(ins.lang, languages, rng) for ins in batch]
    ys = [ins.tgt[:-1] if ins.tgt and ins.tgt[-1] == eos else ins.tgt for ins in batch]
    xs = greedy_batch_backtranslate(model, ys, inter)
    return [AugmentedInstance(x, list(ins.tgt), ins.lang, t2) for x, ins, t2 in zip(xs, batch, inter)]


def eligible(instances: Sequence[TrainingInstance], languages: Sequence[int] | None) -> list[int]:
    """Indices of instances whose target language lies in the ROBT language set."""
    if languages is None:
        return list(range(len(instances)))
    allowed = set(languages)
    return [i for i, ins in enumerate(instances) if ins.lang in allowed]


class PlateauDetector:
    """Converged once ``patience`` evaluations in a row fail to beat the best by ``min_improvement``."""

    def __init__(self, patience: int, min_improvement: float):
        self.patience = patience
        self.min_improvement = min_improvement
        self.best: float | None = None
        self.stale = 0

    def update(self, value: float) -> bool:
        if self.best is None or value >= self.best + self.min_improvement:
            self.best = value if self.best is None else max(self.best, value)
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class RobtRun:
    steps: int = 0
    converged: bool = False
    curve: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


def robt_finetune(trainer: Trainer, data: Sequence[TrainingInstance], cfg: RobtConfig,
                  evaluate: Callable[[NMTModel], dict] | None = None, log_path=None,
                  on_batch: Callable[[list[TrainingInstance], list[AugmentedInstance]], None] | None = None) -> RobtRun:
    """Finetune ``trainer.model`` in place.

    The learning-rate schedule continues from the trainer's step counter.
    ``evaluate(model)`` must return a dict with ``acc_zero`` (and optionally
    ``bleu_zero``); it is called every ``eval_every`` steps and drives the
    plateau stop. Without it the loop runs for ``max_steps``.
    """
    model = trainer.model
    languages = list(cfg.languages) if cfg.languages is not None else list(range(len(model.config.languages)))
    if len(set(languages)) < 2:
        raise ConfigError("ROBT needs at least two languages")
    pool = eligible(data, cfg.languages)
    if not pool:
        raise ConfigError("no training instances target the ROBT language set")
    rng = np.random.default_rng(cfg.seed)
    record = JsonlLog(log_path)
    run = RobtRun()
    plateau = PlateauDetector(cfg.patience, cfg.min_improvement)
    eos = model.config.eos_id

    def checkpoint_eval():
        metrics = evaluate(model)
        point = {"step": run.steps, "global_step": trainer.opt.step, **metrics}
        run.curve.append(point)
        record.write(**point)
        return plateau.update(metrics["acc_zero"])

    if evaluate is not None and cfg.max_steps > 0:
        checkpoint_eval()
    while run.steps < cfg.max_steps:
        picks = rng.choice(len(pool), size=min(cfg.batch_size, len(pool)), replace=False)
        sampled = [data[pool[i]] for i in picks]
        augmented = augment(sampled, model, languages, rng, eos)
        if on_batch is not None:
            on_batch(sampled, augmented)
        batch = make_batch(list(sampled) + [a.as_training() for a in augmented])
        run.losses.append(trainer.step_on(batch))
        run.steps += 1
        if evaluate is not None and run.steps % cfg.eval_every == 0:
            if checkpoint_eval():
                run.converged = True
                break
    return run
