"""Joint multilingual vocabulary with target-language tag tokens.

Reserved ids are fixed: ``<pad>``=0, ``<unk>``=1, ``<s>``=2, ``</s>``=3,
followed by one ``<2XX>`` tag per language in language order, followed by
ordinary tokens sorted by descending frequency (first occurrence breaks
ties).

Two segmentation modes exist. ``word`` keeps whitespace tokens whole.
``bpe`` learns a fixed number of frequency-ranked merges per word and marks
non-final pieces with a trailing ``@@``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, LanguageError, SequenceError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")
CONT = "@@"
FORMAT_VERSION = 1


def tag_token(lang: str) -> str:
    return f"<2{lang.upper()}>"


@dataclass
class TrainingInstance:
    """One tagged example: ``src`` ids, ``tgt`` ids ending in EOS, target language index."""

    src: list[int]
    tgt: list[int]
    lang: int
    src_lang: int | None = None


def learn_bpe(words: Counter, num_merges: int) -> list[tuple[str, str]]:
    """Greedy BPE over a word-frequency table.

    Each round merges the most frequent adjacent symbol pair; ties go to the
    pair seen first when scanning words in insertion order.
    """
    segs = {w: list(w) for w in words}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        counts: dict[tuple[str, str], int] = {}
        for w, freq in words.items():
            s = segs[w]
            for pair in zip(s, s[1:]):
                counts[pair] = counts.get(pair, 0) + freq
        if not counts:
            break
        best = max(counts.items(), key=lambda kv: kv[1])[0]  # max keeps the first maximal key
        merges.append(best)
        for w in segs:
            segs[w] = _merge_once(segs[w], best)
    return merges


def _merge_once(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(pair[0] + pair[1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def apply_bpe(word: str, merges: Sequence[tuple[str, str]]) -> list[str]:
    symbols = list(word)
    for pair in merges:
        if len(symbols) < 2:
            break
        symbols = _merge_once(symbols, pair)
    return [s + CONT for s in symbols[:-1]] + symbols[-1:]


@dataclass
class Vocabulary:
    languages: tuple[str, ...]
    tokens: list[str]
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.languages = tuple(self.languages)
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        for lang in self.languages:
            if tag_token(lang) not in self._index:
                raise ConfigError(f"missing tag token for language {lang!r}")
        self._lang_index = {lang: i for i, lang in enumerate(self.languages)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str):
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, i: int) -> str:
        return self.tokens[i]

    @property
    def num_reserved(self) -> int:
        return len(RESERVED) + len(self.languages)

    def lang_index(self, lang: str) -> int:
        try:
            return self._lang_index[lang]
        except KeyError:
            raise LanguageError(f"unknown language {lang!r}; known: {', '.join(self.languages)}") from None

    def tag_id(self, lang: str) -> int:
        self.lang_index(lang)
        return self._index[tag_token(lang)]

    @property
    def tag_ids(self) -> tuple[int, ...]:
        return tuple(self._index[tag_token(l)] for l in self.languages)

    def is_special(self, i: int) -> bool:
        return i < self.num_reserved

    # --- text <-> ids -------------------------------------------------
    def segment(self, text: str) -> list[str]:
        words = text.split()
        if not self.merges:
            return words
        pieces: list[str] = []
        for w in words:
            pieces.extend(apply_bpe(w, self.merges))
        return pieces

    def encode(self, text: str) -> list[int]:
        """Ids of ``text``; reserved or tag strings inside text become UNK."""
        ids = [self.id(p) for p in self.segment(text)]
        return [UNK if self.is_special(i) else i for i in ids]

    def decode(self, ids: Iterable[int]) -> str:
        pieces = [self.tokens[i] for i in ids if not self.is_special(int(i)) or int(i) == UNK]
        text = " ".join(pieces)
        return text.replace(CONT + " ", "").removesuffix(CONT)

    # --- persistence --------------------------------------------------
    def save(self, path):
        payload = {"format": "zsnmt-vocab", "version": FORMAT_VERSION, "languages": list(self.languages),
                   "tokens": self.tokens, "merges": [list(m) for m in self.merges]}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=0) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "zsnmt-vocab":
            raise ConfigError(f"{path} is not a vocabulary file")
        return cls(tuple(payload["languages"]), list(payload["tokens"]), [tuple(m) for m in payload["merges"]])


def build_vocab(corpora: Iterable[str], size: int, languages: Sequence[str], mode: str = "word",
                merges: int = 0) -> Vocabulary:
    """Build a joint vocabulary of at most ``size`` entries.

    ``corpora`` is an iterable of sentences from all languages. Output is
    deterministic given the input order.
    """
    languages = tuple(languages)
    reserved = list(RESERVED) + [tag_token(l) for l in languages]
    if size <= len(reserved):
        raise ConfigError(f"vocabulary size {size} must exceed {len(reserved)} reserved and tag entries")
    if mode not in ("word", "bpe"):
        raise ConfigError(f"unknown vocabulary mode {mode!r}")
    sentences = list(corpora)
    words = Counter(w for s in sentences for w in s.split())
    learned: list[tuple[str, str]] = learn_bpe(words, merges) if mode == "bpe" else []
    counts: Counter = Counter()
    for w, freq in words.items():
        for piece in (apply_bpe(w, learned) if learned else [w]):
            counts[piece] += freq
    reserved_set = set(reserved)
    ranked = [tok for tok, _ in sorted(counts.items(), key=lambda kv: -kv[1]) if tok not in reserved_set]
    room = size - len(reserved)
    return Vocabulary(languages, reserved + ranked[:room], learned)


def encode_instance(src_text: str, tgt_text: str, lang: str, vocab: Vocabulary,
                    src_lang: str | None = None) -> TrainingInstance:
    """Tokenize a sentence pair for translation into ``lang``.

    The tag is not inserted into ``src``; the model prepends ``<2LANG>``.
    """
    t = vocab.lang_index(lang)
    tgt = vocab.encode(tgt_text)
    if not tgt:
        raise SequenceError("empty target sentence")
    s = vocab.lang_index(src_lang) if src_lang is not None else None
    return TrainingInstance(vocab.encode(src_text), tgt + [EOS], t, s)
