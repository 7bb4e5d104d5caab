"""Synthetic English-centric multilingual task with analytic zero-shot references.

Every language renders sentences over a shared concept inventory. Language
``L`` maps concept ``c`` to the surface token ``f"{L}{perm_L[c]}"``, so surface
vocabularies are disjoint by construction. English uses the identity
permutation. Some languages also swap adjacent tokens, so translation is not
a pure token substitution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np

from .errors import ConfigError

ENGLISH = "en"


def language_codes(k: int) -> list[str]:
    """``k`` non-English pseudo-language codes: xa, xb, ..."""
    letters = "abcdefghijklmnopqrstuvwyz"
    codes = []
    for i in range(k):
        codes.append("x" + letters[i] if i < len(letters) else f"x{i}")
    return codes


def swap_pairs(seq: list) -> list:
    out = list(seq)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


@dataclass
class SyntheticSuite:
    languages: tuple[str, ...]
    concepts: int
    ciphers: dict[str, np.ndarray]
    reorder: dict[str, bool]
    pairs: dict[str, dict[str, dict[str, list[str]]]] = field(default_factory=dict)
    zero_shot: dict[str, dict[str, list[str]]] = field(default_factory=dict)
    chain: tuple | None = None     # (start probabilities, per-concept successors) when a grammar is used

    @property
    def non_english(self) -> list[str]:
        return [l for l in self.languages if l != ENGLISH]

    def render(self, concept_ids, lang: str) -> str:
        order = swap_pairs(list(concept_ids)) if self.reorder[lang] else list(concept_ids)
        perm = self.ciphers[lang]
        return " ".join(f"{lang}{perm[c]}" for c in order)

    def parse(self, sentence: str, lang: str) -> list[int]:
        inverse = np.argsort(self.ciphers[lang])
        ids = [int(inverse[int(tok[len(lang):])]) for tok in sentence.split()]
        return swap_pairs(ids) if self.reorder[lang] else ids

    def translate(self, sentence: str, src: str, tgt: str) -> str:
        """Exact reference translation by cipher composition."""
        return self.render(self.parse(sentence, src), tgt)

    def vocabulary_of(self, lang: str) -> set[str]:
        return {f"{lang}{i}" for i in range(self.concepts)}

    def token_table(self) -> dict[str, str]:
        return {tok: lang for lang in self.languages for tok in self.vocabulary_of(lang)}

    def write(self, root):
        """Write ``<pair>/<split>.<lang>`` files (English-centric and zero-shot test pairs)."""
        root = Path(root)
        for pair, splits in list(self.pairs.items()) + [(p, {"test": s}) for p, s in self.zero_shot.items()]:
            for split, sides in splits.items():
                d = root / pair
                d.mkdir(parents=True, exist_ok=True)
                for lang, lines in sides.items():
                    (d / f"{split}.{lang}").write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def concept_chain(concepts: int, rng: np.random.Generator, branching: int = 6, exponent: float = 1.0):
    """Zipfian start distribution and per-concept sparse successor lists."""
    zipf = 1.0 / np.arange(1, concepts + 1) ** exponent
    start = zipf / zipf.sum()
    successors = []
    for _ in range(concepts):
        nxt = rng.choice(concepts, size=min(branching, concepts), replace=False, p=start)
        w = 1.0 / np.arange(1, len(nxt) + 1) ** exponent
        successors.append((nxt, w / w.sum()))
    return start, successors


def generate_synthetic_suite(k: int, sentences_per_pair: int, length_range=(4, 12), seed: int = 0,
                             concepts: int = 80, n_valid: int = 200, n_test: int = 200,
                             reorder: bool = True, grammar: bool = False) -> SyntheticSuite:
    """Build a suite with English plus ``k - 1`` other languages (``k`` >= 3).

    English-centric pairs get train/valid/test splits; every unordered pair of
    non-English languages gets a test-only split for zero-shot evaluation.
    With ``grammar`` set, concept sequences follow a sparse Markov chain with
    Zipfian start and successor weights shared by all languages; otherwise
    concepts are drawn uniformly and independently.
    """
    if k < 3:
        raise ConfigError("a synthetic suite needs k >= 3 languages (English plus two others)")
    lo, hi = length_range
    if not 1 <= lo <= hi:
        raise ConfigError(f"invalid sentence length range {length_range}")
    rng = np.random.default_rng(seed)
    others = language_codes(k - 1)
    langs = (ENGLISH, *others)
    ciphers = {ENGLISH: np.arange(concepts)}
    swaps = {ENGLISH: False}
    for i, l in enumerate(others):
        ciphers[l] = rng.permutation(concepts)
        swaps[l] = reorder and i % 2 == 0
    suite = SyntheticSuite(langs, concepts, ciphers, swaps)

    chain = suite.chain = concept_chain(concepts, rng) if grammar else None

    def sentence():
        n = int(rng.integers(lo, hi + 1))
        if chain is None:
            return rng.integers(0, concepts, size=n).tolist()
        start, successors = chain
        seq = [int(rng.choice(concepts, p=start))]
        while len(seq) < n:
            nxt, weights = successors[seq[-1]]
            seq.append(int(rng.choice(nxt, p=weights)))
        return seq

    for l in others:
        splits = {}
        for split, n in (("train", sentences_per_pair), ("valid", n_valid), ("test", n_test)):
            cs = [sentence() for _ in range(n)]
            splits[split] = {ENGLISH: [suite.render(c, ENGLISH) for c in cs], l: [suite.render(c, l) for c in cs]}
        suite.pairs[f"{ENGLISH}-{l}"] = splits
    for a, b in (p for p in permutations(others, 2) if p[0] < p[1]):
        cs = [sentence() for _ in range(n_test)]
        suite.zero_shot[f"{a}-{b}"] = {a: [suite.render(c, a) for c in cs], b: [suite.render(c, b) for c in cs]}
    return suite
