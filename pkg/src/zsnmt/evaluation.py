"""Corpus BLEU, translation-language detection, win ratio and correlation."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EvaluationError

UNDETERMINED = "und"


# ----------------------------------------------------------------------
# BLEU
# ----------------------------------------------------------------------
def tokenize_13a(line: str) -> str:
    """mteval-v13a style punctuation splitting."""
    norm = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    norm = norm.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
    norm = f" {norm} "
    norm = re.sub(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])", r" \1 ", norm)
    norm = re.sub(r"([^0-9])([\.,])", r"\1 \2 ", norm)
    norm = re.sub(r"([\.,])([^0-9])", r" \1 \2", norm)
    norm = re.sub(r"([0-9])(-)", r"\1 \2 ", norm)
    return " ".join(norm.split())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuScore:
    score: float
    precisions: list[float]
    brevity_penalty: float
    sys_len: int
    ref_len: int
    correct: list[int]
    total: list[int]


def bleu_stats(hypotheses: Sequence[str], references: Sequence[str], tokenize: str = "none", order: int = 4):
    if len(hypotheses) != len(references):
        raise EvaluationError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EvaluationError("empty corpus")
    tok = tokenize_13a if tokenize == "13a" else (lambda s: s)
    correct, total = [0] * order, [0] * order
    sys_len = ref_len = 0
    for h, r in zip(hypotheses, references):
        ht, rt = tok(h).split(), tok(r).split()
        sys_len += len(ht)
        ref_len += len(rt)
        for n in range(1, order + 1):
            hc, rc = _ngrams(ht, n), _ngrams(rt, n)
            total[n - 1] += sum(hc.values())
            correct[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    return correct, total, sys_len, ref_len


def bleu_from_stats(correct, total, sys_len, ref_len, order: int = 4) -> BleuScore:
    """Corpus BLEU with exponential ("exp") smoothing of zero n-gram matches.

    Orders with no candidate n-grams at all (every hypothesis shorter than
    ``n``) are left out of the geometric mean, so ``BLEU(h, h) = 100`` holds
    for short corpora too.
    """
    precisions = [0.0] * order
    smooth = 1.0
    effective = 0
    for n in range(order):
        if total[n] == 0:
            break
        effective += 1
        if correct[n] == 0:
            smooth *= 2
            precisions[n] = 100.0 / (smooth * total[n])
        else:
            precisions[n] = 100.0 * correct[n] / total[n]
    bp = 1.0
    if sys_len < ref_len:
        bp = math.exp(1 - ref_len / sys_len) if sys_len > 0 else 0.0
    if effective == 0:
        return BleuScore(0.0, precisions, bp, sys_len, ref_len, list(correct), list(total))
    score = bp * math.exp(sum(math.log(p) for p in precisions[:effective]) / effective)
    return BleuScore(score, precisions, bp, sys_len, ref_len, list(correct), list(total))


def bleu_corpus(hypotheses: Sequence[str], references: Sequence[str], tokenize: str = "none") -> float:
    """Corpus-level BLEU (0-100), single reference per hypothesis."""
    return bleu_from_stats(*bleu_stats(hypotheses, references, tokenize)).score


# ----------------------------------------------------------------------
# language detection
# ----------------------------------------------------------------------
@dataclass
class Detection:
    lang: str
    confidence: float


class VocabularyDetector:
    """Majority vote over tokens with a known owning language."""

    def __init__(self, token_lang: Mapping[str, str], languages: Sequence[str]):
        self.token_lang = dict(token_lang)
        self.languages = list(languages)

    def detect(self, sentence: str) -> Detection:
        tokens = sentence.split()
        if not tokens:
            raise EvaluationError("cannot detect the language of an empty sentence")
        votes = Counter(self.token_lang[t] for t in tokens if t in self.token_lang)
        if not votes:
            return Detection(UNDETERMINED, 0.0)
        best = max(self.languages, key=lambda l: votes.get(l, 0))  # first language wins ties
        return Detection(best, votes[best] / len(tokens))


class CharNgramDetector:
    """Naive Bayes over character 1..n-grams, trained on reference text."""

    def __init__(self, n: int = 3, alpha: float = 0.5):
        self.n = n
        self.alpha = alpha
        self.counts: dict[str, Counter] = {}
        self.totals: dict[str, int] = {}
        self.vocab: set[str] = set()

    def _grams(self, text: str) -> list[str]:
        padded = f" {' '.join(text.lower().split())} "
        return [padded[i:i + k] for k in range(1, self.n + 1) for i in range(len(padded) - k + 1)]

    def fit(self, samples: Mapping[str, Iterable[str]]) -> "CharNgramDetector":
        for lang, lines in samples.items():
            c = self.counts.setdefault(lang, Counter())
            for line in lines:
                c.update(self._grams(line))
        self.totals = {l: sum(c.values()) for l, c in self.counts.items()}
        self.vocab = set().union(*self.counts.values()) if self.counts else set()
        return self

    def detect(self, sentence: str) -> Detection:
        if not sentence.strip():
            raise EvaluationError("cannot detect the language of an empty sentence")
        grams = [g for g in self._grams(sentence) if g in self.vocab]
        if not grams or not self.counts:
            return Detection(UNDETERMINED, 0.0)
        V = len(self.vocab)
        langs = list(self.counts)
        scores = np.array([
            sum(math.log((self.counts[l][g] + self.alpha) / (self.totals[l] + self.alpha * V)) for g in grams)
            for l in langs
        ])
        post = np.exp(scores - scores.max())
        post /= post.sum()
        i = int(np.argmax(post))
        return Detection(langs[i], float(post[i]))


def detect_language(sentence: str, detector) -> Detection:
    return detector.detect(sentence)


def language_accuracy(hypotheses: Sequence[str], expected: str, detector) -> float:
    """Fraction of hypotheses detected as ``expected``; empty outputs count as misses."""
    if not hypotheses:
        raise EvaluationError("no hypotheses")
    hits = 0
    for h in hypotheses:
        if h.strip() and detector.detect(h).lang == expected:
            hits += 1
    return hits / len(hypotheses)


# ----------------------------------------------------------------------
# aggregates
# ----------------------------------------------------------------------
@dataclass
class DirectionResult:
    src: str
    tgt: str
    bleu: float
    language_accuracy: float
    n_sentences: int

    def __post_init__(self):
        if not 0.0 <= self.bleu <= 100.0 + 1e-9:
            raise EvaluationError(f"BLEU out of range: {self.bleu}")
        if not 0.0 <= self.language_accuracy <= 1.0:
            raise EvaluationError(f"accuracy out of range: {self.language_accuracy}")

    @property
    def key(self) -> str:
        return f"{self.src}-{self.tgt}"


def win_ratio(results: Mapping[str, float], reference: Mapping[str, float]) -> float:
    """Percentage of directions where ``results`` strictly beats ``reference``."""
    if set(results) != set(reference):
        raise EvaluationError("win ratio needs identical direction sets")
    if not results:
        raise EvaluationError("win ratio over zero directions")
    wins = sum(1 for k in results if results[k] > reference[k])
    return 100.0 * wins / len(results)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise EvaluationError("pearson needs two equal-length 1-D sequences")
    if len(x) < 2:
        raise EvaluationError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise EvaluationError("correlation undefined: zero variance")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


@dataclass
class EvalReport:
    directions: list[DirectionResult]
    zero_shot: list[str] = field(default_factory=list)
    label: str = ""

    def by_key(self) -> dict[str, DirectionResult]:
        return {d.key: d for d in self.directions}

    def _mean(self, keys, attr) -> float | None:
        vals = [getattr(self.by_key()[k], attr) for k in keys]
        return float(np.mean(vals)) if vals else None

    @property
    def supervised(self) -> list[str]:
        zs = set(self.zero_shot)
        return [d.key for d in self.directions if d.key not in zs]

    @property
    def bleu_all(self) -> float | None:
        return self._mean(self.supervised, "bleu")

    @property
    def acc_all(self) -> float | None:
        return self._mean(self.supervised, "language_accuracy")

    @property
    def bleu_zero(self) -> float | None:
        return self._mean(self.zero_shot, "bleu")

    @property
    def acc_zero(self) -> float | None:
        return self._mean(self.zero_shot, "language_accuracy")

    def bleu_zero_on(self, keys: Sequence[str]) -> float:
        return float(np.mean([self.by_key()[k].bleu for k in keys]))

    def correlation(self) -> float | None:
        zs = [self.by_key()[k] for k in self.zero_shot]
        try:
            return pearson([d.language_accuracy for d in zs], [d.bleu for d in zs])
        except EvaluationError:
            return None

    def win_ratio_vs(self, other: "EvalReport", keys: Sequence[str] | None = None) -> float:
        keys = list(keys) if keys is not None else [d.key for d in self.directions]
        a, b = self.by_key(), other.by_key()
        return win_ratio({k: a[k].bleu for k in keys}, {k: b[k].bleu for k in keys})

    def aggregates(self) -> dict:
        return {"bleu_all": self.bleu_all, "acc_all": self.acc_all, "bleu_zero": self.bleu_zero,
                "acc_zero": self.acc_zero, "pearson_acc_bleu_zero": self.correlation()}

    def to_records(self, reference: "EvalReport | None" = None) -> str:
        """Key-value text: one ``direction`` line per direction, then aggregates."""
        lines = []
        for d in self.directions:
            kind = "zero" if d.key in self.zero_shot else "supervised"
            lines.append(f"direction={d.key} kind={kind} bleu={d.bleu:.2f} acc={d.language_accuracy:.4f} n={d.n_sentences}")
        agg = self.aggregates()
        if reference is not None:
            agg["win_ratio"] = self.win_ratio_vs(reference)
        parts = [f"{k}={'NA' if v is None else format(v, '.4f')}" for k, v in agg.items()]
        lines.append("aggregate " + " ".join(parts))
        if self.label:
            lines.insert(0, f"report label={self.label}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        """Aligned columns in the style of the result tables."""
        head = f"{'Direction':<10} {'Kind':<10} {'BLEU':>7} {'ACC':>7} {'N':>5}"
        rows = [head, "-" * len(head)]
        for d in self.directions:
            kind = "zero" if d.key in self.zero_shot else "sup"
            rows.append(f"{d.key:<10} {kind:<10} {d.bleu:>7.2f} {100 * d.language_accuracy:>7.2f} {d.n_sentences:>5}")
        rows.append("-" * len(head))
        for name, v in (("BLEU_all", self.bleu_all), ("BLEU_zero", self.bleu_zero)):
            if v is not None:
                rows.append(f"{name:<21} {v:>7.2f}")
        if self.acc_zero is not None:
            rows.append(f"{'ACC_zero':<21} {100 * self.acc_zero:>15.2f}")
        return "\n".join(rows) + "\n"

    def to_dict(self) -> dict:
        return {"label": self.label, "directions": [asdict(d) for d in self.directions],
                "zero_shot": list(self.zero_shot), "aggregates": self.aggregates()}
