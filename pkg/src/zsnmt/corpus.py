"""English-centric corpus sampling with cross-lingual overlap filtering.

Raw input is a directory of line-aligned files ``<src>-<tgt>.<lang>``. The
sampler draws valid/test sets for every pair first, then training data, and
rejects any line whose normalised source *or* target sentence was already
placed in a different split anywhere in the collection. An English sentence
in one pair's training data can therefore never show up in another pair's
test set.

Pairs without English are zero-shot pairs: they get a test split only,
filtered against everything sampled for the English-centric pairs.
"""

from __future__ import annotations

import logging
import unicodedata
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def normalize(sentence: str) -> str:
    return " ".join(unicodedata.normalize("NFC", sentence).split())


@dataclass
class ParallelPair:
    name: str
    langs: tuple[str, str]
    splits: dict[str, dict[str, list[str]]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def size(self, split: str) -> int:
        side = self.splits.get(split, {})
        return len(next(iter(side.values()))) if side else 0


@dataclass
class SampleStats:
    cap_train: int
    pairs: dict[str, dict[str, int]] = field(default_factory=dict)
    dropped: list[str] = field(default_factory=list)
    filtered: int = 0

    def coverage(self) -> dict[str, int]:
        sizes = [p["train"] for name, p in self.pairs.items() if p.get("english_centric")]
        cap = self.cap_train
        return {
            "pairs": len(sizes),
            "at_cap": sum(s >= cap for s in sizes),
            "at_cap_div_10": sum(s >= cap / 10 for s in sizes),
            "at_cap_div_100": sum(s >= cap / 100 for s in sizes),
            "total_train_pairs": sum(sizes),
        }

    def report(self) -> str:
        lines = []
        for name in sorted(self.pairs):
            p = self.pairs[name]
            lines.append(f"pair={name} train={p['train']} valid={p['valid']} test={p['test']} "
                         f"filtered={p['filtered']} flags={p.get('flags') or '-'}")
        for name in self.dropped:
            lines.append(f"pair={name} dropped=1")
        cov = self.coverage()
        lines.append(" ".join(f"{k}={v}" for k, v in cov.items()) + f" filtered_lines={self.filtered}")
        return "\n".join(lines) + "\n"


def find_raw_pairs(raw_dir) -> dict[str, dict[str, Path]]:
    """Map ``pair -> {lang: path}`` for files named ``<a>-<b>.<lang>``."""
    raw_dir = Path(raw_dir)
    pairs: dict[str, dict[str, Path]] = {}
    for path in sorted(raw_dir.iterdir()):
        if not path.is_file() or path.suffix == "" or "-" not in path.stem:
            continue
        lang = path.suffix[1:]
        a, _, b = path.stem.partition("-")
        if lang not in (a, b):
            continue
        pairs.setdefault(path.stem, {})[lang] = path
    incomplete = [p for p, files in pairs.items() if len(files) != 2]
    if incomplete:
        raise ConfigError(f"pairs missing a side: {', '.join(incomplete)}")
    return pairs


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _pair_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def sample_corpus(raw: Mapping[str, Mapping[str, list[str]]], cap_train: int, n_valid: int, n_test: int,
                  seed: int = 0, pivot: str = "en") -> tuple[dict[str, ParallelPair], SampleStats]:
    """Sample train/valid/test per pair with collection-wide overlap filtering.

    ``raw`` maps a pair name to ``{lang: aligned lines}``.
    """
    if min(cap_train, n_valid, n_test) < 0:
        raise ConfigError("split sizes must be non-negative")
    owner: dict[str, str] = {}  # normalised sentence -> split that owns it
    stats = SampleStats(cap_train)
    out: dict[str, ParallelPair] = {}
    orders: dict[str, np.ndarray] = {}
    centric, zero = [], []
    for name in sorted(raw):
        langs = tuple(raw[name])
        if len(langs) != 2:
            raise ConfigError(f"pair {name} must have exactly two sides")
        a, b = (raw[name][l] for l in langs)
        if len(a) != len(b):
            raise ConfigError(f"pair {name} is not line-aligned ({len(a)} vs {len(b)} lines)")
        (centric if pivot in langs else zero).append(name)
        orders[name] = _pair_rng(seed, name).permutation(len(a))
        stats.pairs[name] = {"train": 0, "valid": 0, "test": 0, "filtered": 0, "flags": [],
                             "english_centric": name in centric}
        out[name] = ParallelPair(name, langs, {s: {l: [] for l in langs} for s in SPLITS})

    def take(name: str, split: str, want: int, cursor: int) -> int:
        pair, langs = out[name], out[name].langs
        sides = [raw[name][l] for l in langs]
        order = orders[name]
        got = pair.size(split)
        while got < want and cursor < len(order):
            i = order[cursor]
            cursor += 1
            sents = [normalize(s[i]) for s in sides]
            if not all(sents):
                continue
            if any(owner.get(s, split) != split for s in sents):
                stats.pairs[name]["filtered"] += 1
                stats.filtered += 1
                continue
            if split != "train" and any(s in owner for s in sents):
                # evaluation sets also stay free of repeats
                stats.pairs[name]["filtered"] += 1
                stats.filtered += 1
                continue
            for s in sents:
                owner[s] = split
            for l, s in zip(langs, sents):
                pair.splits[split][l].append(s)
            got += 1
        return cursor

    cursors = {}
    for name in centric:
        usable = len({normalize(x) for x in raw[name][out[name].langs[0]] if normalize(x)})
        if usable < n_valid + n_test + 1:
            stats.pairs[name]["flags"].append("no_eval")
            out[name].flags.append("no_eval")
            log.warning("pair %s has too little data for valid/test; training split only", name)
            cursors[name] = 0
            continue
        c = take(name, "valid", n_valid, 0)
        cursors[name] = take(name, "test", n_test, c)
    for name in zero:
        cursors[name] = take(name, "test", n_test, 0)
    for name in centric:
        take(name, "train", cap_train, cursors[name])
    for name in centric + zero:
        for s in SPLITS:
            stats.pairs[name][s] = out[name].size(s)
        if name in centric and stats.pairs[name]["train"] == 0:
            log.warning("pair %s has no training data after filtering; dropped", name)
            stats.dropped.append(name)
            del out[name]
            del stats.pairs[name]
    return out, stats


def sample_corpus_dir(raw_dir, out_dir, cap_train: int, n_valid: int, n_test: int, seed: int = 0,
                      pivot: str = "en") -> SampleStats:
    files = find_raw_pairs(raw_dir)
    raw = {p: {l: read_lines(path) for l, path in sides.items()} for p, sides in files.items()}
    pairs, stats = sample_corpus(raw, cap_train, n_valid, n_test, seed, pivot)
    write_data_dir(out_dir, pairs)
    (Path(out_dir) / "stats.txt").write_text(stats.report(), encoding="utf-8")
    return stats


def write_data_dir(root, pairs: Mapping[str, ParallelPair]):
    root = Path(root)
    for name, pair in pairs.items():
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for split, sides in pair.splits.items():
            if not next(iter(sides.values()), []):
                continue
            for lang, lines in sides.items():
                (d / f"{split}.{lang}").write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def load_data_dir(root) -> dict[str, dict[str, dict[str, list[str]]]]:
    """Read ``<pair>/<split>.<lang>`` files into ``pair -> split -> lang -> lines``."""
    root = Path(root)
    data: dict[str, dict[str, dict[str, list[str]]]] = {}
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(d.iterdir()):
            split, _, lang = f.name.partition(".")
            if split in SPLITS and lang:
                data.setdefault(d.name, {}).setdefault(split, {})[lang] = read_lines(f)
    if not data:
        raise ConfigError(f"no <pair>/<split>.<lang> files under {root}")
    return data
