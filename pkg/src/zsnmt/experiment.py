"""Desk-scale pipeline: synthetic suite, pretraining, zero-shot evaluation, ROBT."""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .decoding import BeamConfig, greedy_decode, pivot_translate, translate
from .errors import ConfigError
from .evaluation import (CharNgramDetector, DirectionResult, EvalReport, VocabularyDetector, bleu_corpus,
                         language_accuracy)
from .model import ModelConfig, NMTModel
from .robt import RobtConfig, RobtRun, robt_finetune
from .synthetic import ENGLISH, SyntheticSuite, generate_synthetic_suite
from .trainer import TrainConfig, Trainer
from .vocab import TrainingInstance, Vocabulary, build_vocab, encode_instance

log = logging.getLogger(__name__)


# A direction's test data: source lines and reference lines.
TestSet = tuple[list[str], list[str]]


def english_centric_instances(pairs: Mapping[str, Mapping[str, Mapping[str, list[str]]]], vocab: Vocabulary,
                              split: str = "train", pivot: str = ENGLISH) -> list[TrainingInstance]:
    """Both translation directions of every English-centric pair."""
    out = []
    for name in sorted(pairs):
        sides = pairs[name].get(split)
        if not sides or pivot not in sides:
            continue
        other = next(l for l in sides if l != pivot)
        for e, x in zip(sides[pivot], sides[other]):
            if not e.strip() or not x.strip():
                continue
            out.append(encode_instance(e, x, other, vocab, pivot))
            out.append(encode_instance(x, e, pivot, vocab, other))
    return out


def test_directions(pairs: Mapping[str, Mapping[str, Mapping[str, list[str]]]], pivot: str = ENGLISH,
                    split: str = "test", limit: int | None = None) -> tuple[dict[str, TestSet], list[str]]:
    """Both directions of each pair's ``split``; returns the sets and the zero-shot keys."""
    sets: dict[str, TestSet] = {}
    zero = []
    for name in sorted(pairs):
        sides = pairs[name].get(split)
        if not sides or len(sides) != 2:
            continue
        a, b = sorted(sides)
        for s, t in ((a, b), (b, a)):
            key = f"{s}-{t}"
            sets[key] = (list(sides[s][:limit]), list(sides[t][:limit]))
            if pivot not in (s, t):
                zero.append(key)
    return sets, zero


def token_owner_table(lines_by_lang: Mapping[str, Sequence[str]]) -> dict[str, str]:
    """Map each token to the language it occurs in most often (first language wins ties)."""
    counts: dict[str, Counter] = {}
    for lang, lines in lines_by_lang.items():
        for line in lines:
            for tok in line.split():
                counts.setdefault(tok, Counter())[lang] += 1
    order = list(lines_by_lang)
    return {tok: max(order, key=lambda l: c.get(l, 0)) for tok, c in counts.items()}


def make_detector(kind: str, lines_by_lang: Mapping[str, Sequence[str]]):
    if kind == "vocab":
        return VocabularyDetector(token_owner_table(lines_by_lang), list(lines_by_lang))
    if kind == "char":
        return CharNgramDetector().fit(lines_by_lang)
    raise ConfigError(f"unknown detector {kind!r}; use 'vocab' or 'char'")


def evaluate_directions(model: NMTModel, vocab: Vocabulary, sets: Mapping[str, TestSet], zero_shot: Sequence[str],
                        detector, beam: BeamConfig | None = None, greedy: bool = True, pivot_via: str | None = None,
                        label: str = "", tokenize: str = "none") -> EvalReport:
    """Translate every direction and score BLEU and target-language accuracy.

    With ``pivot_via`` set, zero-shot directions go through that language and
    supervised directions are translated directly.
    """
    results = []
    for key, (src_lines, ref_lines) in sets.items():
        s, t = key.split("-")
        sources = [vocab.encode(line) for line in src_lines]
        if pivot_via is not None and key in zero_shot:
            ids = pivot_translate(model, sources, s, t, beam, pivot=pivot_via, greedy=greedy)
        else:
            ids = translate(model, sources, [t], beam, greedy=greedy)
        hyps = [vocab.decode(h) for h in ids]
        results.append(DirectionResult(s, t, bleu_corpus(hyps, ref_lines, tokenize),
                                       language_accuracy(hyps, t, detector), len(hyps)))
    return EvalReport(results, [k for k in zero_shot if k in sets], label)


@dataclass
class DeskConfig:
    languages: int = 6                 # English plus five others
    sentences_per_pair: int = 5000
    min_len: int = 4
    max_len: int = 12
    concepts: int = 80
    n_test: int = 100
    vocab_size: int = 512
    grammar: bool = True               # shared Markov grammar over concepts
    d_model: int = 64
    d_ff: int = 256
    heads: int = 4
    layers: int = 2
    laln: bool = False
    lalt: bool = False
    dropout: float = 0.1
    train_steps: int = 1000
    batch_tokens: int = 2000
    lr_scale: float = 1.0
    warmup: int = 500
    robt_steps: int = 2000
    robt_batch: int = 32
    robt_eval_every: int = 100
    robt_eval_sentences: int = 25
    robt_patience: int = 3
    robt_languages: list[str] | None = None
    greedy: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.languages < 3:
            raise ConfigError("the desk experiment needs at least three languages")
        if self.vocab_size > 512:
            raise ConfigError("desk-scale vocabulary is capped at 512 entries")


@dataclass
class DeskData:
    suite: SyntheticSuite
    vocab: Vocabulary
    train: list[TrainingInstance]
    sets: dict[str, TestSet]
    zero_shot: list[str]
    detector: VocabularyDetector


def prepare_desk_data(cfg: DeskConfig) -> DeskData:
    suite = generate_synthetic_suite(cfg.languages, cfg.sentences_per_pair, (cfg.min_len, cfg.max_len), cfg.seed,
                                     cfg.concepts, n_valid=cfg.n_test, n_test=cfg.n_test, grammar=cfg.grammar)
    corpus = [line for splits in suite.pairs.values() for lines in splits["train"].values() for line in lines]
    vocab = build_vocab(corpus, cfg.vocab_size, suite.languages)
    train = english_centric_instances(suite.pairs, vocab)
    all_pairs = dict(suite.pairs)
    all_pairs.update({p: {"test": sides} for p, sides in suite.zero_shot.items()})
    sets, zero = test_directions(all_pairs)
    detector = VocabularyDetector(suite.token_table(), suite.languages)
    return DeskData(suite, vocab, train, sets, zero, detector)


def desk_model_config(cfg: DeskConfig, data: DeskData) -> ModelConfig:
    return ModelConfig(len(data.vocab), data.suite.languages, data.vocab.tag_ids, d_model=cfg.d_model, d_ff=cfg.d_ff,
                       heads=cfg.heads, layers=cfg.layers, use_laln=cfg.laln, use_lalt=cfg.lalt,
                       dropout=cfg.dropout, attention_dropout=cfg.dropout)


def pretrain(cfg: DeskConfig, data: DeskData, out_dir=None) -> Trainer:
    model = NMTModel(desk_model_config(cfg, data), seed=cfg.seed + 1)
    tcfg = TrainConfig(max_steps=cfg.train_steps, batch_tokens=cfg.batch_tokens, warmup=cfg.warmup,
                       lr_scale=cfg.lr_scale, checkpoint_every=max(cfg.train_steps, 1), seed=cfg.seed + 2)
    trainer = Trainer(model, tcfg, out_dir)
    trainer.train(data.train)
    return trainer


def zero_shot_probe(data: DeskData, sentences: int, keys: Sequence[str] | None = None):
    """Evaluation callback for ROBT: greedy BLEU/accuracy on a small zero-shot subset."""
    keys = list(keys) if keys is not None else data.zero_shot
    subset = {k: (data.sets[k][0][:sentences], data.sets[k][1][:sentences]) for k in keys}

    def probe(model: NMTModel) -> dict:
        rep = evaluate_directions(model, data.vocab, subset, keys, data.detector, greedy=True)
        return {"acc_zero": rep.acc_zero, "bleu_zero": rep.bleu_zero}
    return probe


def run_robt(trainer: Trainer, data: DeskData, cfg: DeskConfig, seed: int, languages: Sequence[str] | None = None,
             probe_keys: Sequence[str] | None = None, log_path=None) -> RobtRun:
    lang_idx = None if languages is None else tuple(data.vocab.lang_index(l) for l in languages)
    rcfg = RobtConfig(max_steps=cfg.robt_steps, batch_size=cfg.robt_batch, languages=lang_idx,
                      eval_every=cfg.robt_eval_every, patience=cfg.robt_patience, seed=seed)
    return robt_finetune(trainer, data.train, rcfg, zero_shot_probe(data, cfg.robt_eval_sentences, probe_keys),
                         log_path)


def clone_trainer(trainer: Trainer, seed: int) -> Trainer:
    """Independent copy of model and optimizer state, continuing the same step counter."""
    model = trainer.model.copy()
    tcfg = TrainConfig(**{**asdict(trainer.cfg), "seed": seed})
    other = Trainer(model, tcfg)
    other.opt.load_arrays(trainer.opt.state_arrays(), trainer.opt.step)
    return other


def write_curve(path, curve: Sequence[Mapping]):
    lines = ["step\tacc_zero\tbleu_zero"]
    lines += [f"{p['step']}\t{p['acc_zero']:.6f}\t{p['bleu_zero']:.4f}" for p in curve]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class DeskResult:
    pre: EvalReport
    pivot: EvalReport
    post: EvalReport
    run: RobtRun
    seconds: dict[str, float] = field(default_factory=dict)
    tuned: Trainer | None = None

    def summary(self) -> dict:
        return {
            "sup_bleu": self.pre.bleu_all, "sup_acc": self.pre.acc_all,
            "pre_acc_zero": self.pre.acc_zero, "post_acc_zero": self.post.acc_zero,
            "pre_bleu_zero": self.pre.bleu_zero, "post_bleu_zero": self.post.bleu_zero,
            "pivot_bleu_zero": self.pivot.bleu_zero, "robt_steps": self.run.steps,
            "robt_converged": self.run.converged, "pearson_pre": self.pre.correlation(),
            "win_ratio_post_vs_pre": self.post.win_ratio_vs(self.pre),
        }


def run_desk_experiment(cfg: DeskConfig, out_dir=None, data: DeskData | None = None,
                        trainer: Trainer | None = None) -> DeskResult:
    """Pretrain (unless ``trainer`` is given), evaluate direct and pivot zero-shot, ROBT, evaluate again."""
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    seconds = {}
    t0 = time.perf_counter()
    data = data or prepare_desk_data(cfg)
    if trainer is None:
        trainer = pretrain(cfg, data, out / "pretrain" if out else None)
    seconds["pretrain"] = time.perf_counter() - t0
    beam = BeamConfig()
    t0 = time.perf_counter()
    pre = evaluate_directions(trainer.model, data.vocab, data.sets, data.zero_shot, data.detector, beam,
                              cfg.greedy, label="pretrained")
    pivot = evaluate_directions(trainer.model, data.vocab, data.sets, data.zero_shot, data.detector, beam,
                                cfg.greedy, pivot_via=ENGLISH, label="pivot")
    seconds["evaluate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    tuned = clone_trainer(trainer, cfg.seed + 3)
    run = run_robt(tuned, data, cfg, cfg.seed + 4, cfg.robt_languages,
                   log_path=out / "robt_log.jsonl" if out else None)
    seconds["robt"] = time.perf_counter() - t0
    post = evaluate_directions(tuned.model, data.vocab, data.sets, data.zero_shot, data.detector, beam,
                               cfg.greedy, label="robt")
    result = DeskResult(pre, pivot, post, run, seconds, tuned)
    if out:
        for rep in (pre, pivot, post):
            (out / f"report.{rep.label}.txt").write_text(rep.to_records(pre if rep is not pre else None),
                                                          encoding="utf-8")
            (out / f"table.{rep.label}.txt").write_text(rep.table(), encoding="utf-8")
        write_curve(out / "curve.tsv", run.curve)
        tuned.save(out / "robt.bin")
    return result
