"""Greedy decoding, length-normalised beam search and pivot translation.

Both searches drive a *stepper*: ``step(state, tokens) -> log-probs`` plus a
state object with ``reorder(index)``. :class:`~zsnmt.model.NMTModel`
provides one through ``start_decoding``/``step``; tests plug in hand-built
tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .model import NMTModel, pad_sequences
from .tensor import no_grad
from .vocab import BOS, EOS

StepFn = Callable[[object, np.ndarray], np.ndarray]


@dataclass
class BeamConfig:
    beam_size: int = 4
    length_penalty: float = 0.6
    max_len_a: float = 2.0
    max_len_b: int = 10

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.length_penalty < 0:
            raise ConfigError("length_penalty must be >= 0")

    def cap(self, src_len: int) -> int:
        return int(self.max_len_a * src_len + self.max_len_b)


def length_penalty(n: int, alpha: float) -> float:
    return ((5.0 + n) / 6.0) ** alpha


# ----------------------------------------------------------------------
# search kernels over a stepper
# ----------------------------------------------------------------------
def greedy_search(step: StepFn, state, max_lens: Sequence[int], bos: int = BOS, eos: int = EOS) -> list[list[int]]:
    """Batched argmax decoding; finished rows are dropped from ``state``."""
    n = len(max_lens)
    caps = np.asarray(max_lens, dtype=np.int64)
    out: list[list[int]] = [[] for _ in range(n)]
    rows = np.array([i for i in range(n) if caps[i] > 0], dtype=np.int64)
    if len(rows) < n:
        state = state.reorder(rows)
    tokens = np.full(len(rows), bos, dtype=np.int64)
    while len(rows):
        logp = step(state, tokens)
        nxt = np.argmax(logp, axis=1)
        keep = []
        for j, (r, tok) in enumerate(zip(rows, nxt)):
            if tok == eos:
                continue
            out[r].append(int(tok))
            if len(out[r]) < caps[r]:
                keep.append(j)
        if len(keep) < len(rows):
            keep = np.asarray(keep, dtype=np.int64)
            state = state.reorder(keep)
            rows, nxt = rows[keep], nxt[keep]
        tokens = nxt
    return out


def beam_search_stepper(step: StepFn, state, max_lens: Sequence[int], beam_size: int = 4,
                        alpha: float = 0.6, bos: int = BOS, eos: int = EOS) -> list[list[int]]:
    """Batched beam search.

    Each step keeps the ``beam_size`` best expansions (end-of-sentence
    included) of a sentence's live hypotheses; expansions that pick EOS are
    finished, so the live beam can shrink. Hypotheses that reach the length
    cap are finished without EOS. A hypothesis scores ``logprob / lp(n)``,
    ``n`` counting every scored token (EOS included), with
    ``lp(n) = ((5 + n) / 6) ** alpha``. Candidate ties go to the earlier beam
    and then the lower token id. With ``beam_size=1`` this is exactly greedy
    decoding.
    """
    n = len(max_lens)
    caps = list(max_lens)
    finished: list[list[tuple[float, list[int]]]] = [[] for _ in range(n)]
    # live hypotheses: per sentence list of (cum_logprob, tokens); rows in `state` follow this order
    live: list[list[tuple[float, list[int]]]] = [[(0.0, [])] if caps[i] > 0 else [] for i in range(n)]
    for i in range(n):
        if caps[i] <= 0:
            finished[i].append((0.0, []))
    order = [i for i in range(n) if live[i]]
    if len(order) < n:
        state = state.reorder(np.asarray(order, dtype=np.int64))
    tokens = np.full(len(order), bos, dtype=np.int64)
    while order:
        logp = step(state, tokens)
        new_rows, new_tokens = [], []
        row = 0
        for s in order:
            hyps = live[s]
            k = len(hyps)
            block = logp[row:row + k]
            cum = np.array([h[0] for h in hyps])[:, None] + block
            flat = cum.reshape(-1)
            picks = np.argsort(-flat, kind="stable")[:beam_size]
            V = block.shape[1]
            survivors = []
            for p in picks:
                b, tok = divmod(int(p), V)
                score, seq = float(flat[p]), hyps[b][1]
                if tok == eos:
                    finished[s].append((score / length_penalty(len(seq) + 1, alpha), seq))
                    continue
                new_seq = seq + [tok]
                if len(new_seq) >= caps[s]:
                    finished[s].append((score / length_penalty(len(new_seq), alpha), new_seq))
                    continue
                survivors.append((score, new_seq, row + b, tok))
            if survivors and finished[s]:
                # no survivor can beat the best finished hypothesis: logprobs only fall and lp(n) <= lp(cap + 1)
                best = max(f[0] for f in finished[s])
                bound = max(c for c, *_ in survivors) / length_penalty(caps[s] + 1, alpha)
                if best >= bound:
                    survivors = []
            live[s] = [(c, seq) for c, seq, _, _ in survivors]
            new_rows.extend(r for *_, r, _ in survivors)
            new_tokens.extend(t for *_, t in survivors)
            row += k
        order = [s for s in order if live[s]]
        if not order:
            break
        state = state.reorder(np.asarray(new_rows, dtype=np.int64))
        tokens = np.asarray(new_tokens, dtype=np.int64)
    results = []
    for s in range(n):
        best = max(finished[s], key=lambda f: f[0])  # max keeps the earliest among ties
        results.append(best[1])
    return results


# ----------------------------------------------------------------------
# model front-ends
# ----------------------------------------------------------------------
def _caps(sources: Sequence[Sequence[int]], max_lens, a: float, b: int) -> list[int]:
    if max_lens is None:
        return [int(a * len(s) + b) for s in sources]
    if np.isscalar(max_lens):
        return [int(max_lens)] * len(sources)
    return [int(m) for m in max_lens]


def _start(model: NMTModel, sources, langs):
    with no_grad():
        enc = model.encode_batch(pad_sequences(sources, min_len=0), langs)
    return model.start_decoding(enc)


def greedy_decode(model: NMTModel, sources: Sequence[Sequence[int]], langs, max_lens=None,
                  batch_size: int = 256) -> list[list[int]]:
    """Greedy translation of each source into the matching language in ``langs``."""
    langs = model.lang_ids(langs)
    if len(langs) == 1 and len(sources) > 1:
        langs = np.repeat(langs, len(sources))
    caps = _caps(sources, max_lens, 2.0, 10)
    out: list[list[int]] = []
    for i in range(0, len(sources), batch_size):
        chunk = list(sources[i:i + batch_size])
        state = _start(model, chunk, langs[i:i + batch_size])
        out.extend(greedy_search(model.step, state, caps[i:i + batch_size],
                                 model.config.bos_id, model.config.eos_id))
    return out


def beam_search(model: NMTModel, sources: Sequence[Sequence[int]], langs, cfg: BeamConfig | None = None,
                max_lens=None, batch_size: int = 128) -> list[list[int]]:
    cfg = cfg or BeamConfig()
    langs = model.lang_ids(langs)
    if len(langs) == 1 and len(sources) > 1:
        langs = np.repeat(langs, len(sources))
    caps = _caps(sources, max_lens, cfg.max_len_a, cfg.max_len_b)
    out: list[list[int]] = []
    for i in range(0, len(sources), batch_size):
        chunk = list(sources[i:i + batch_size])
        state = _start(model, chunk, langs[i:i + batch_size])
        out.extend(beam_search_stepper(model.step, state, caps[i:i + batch_size], cfg.beam_size,
                                       cfg.length_penalty, model.config.bos_id, model.config.eos_id))
    return out


def translate(model: NMTModel, sources, langs, cfg: BeamConfig | None = None, greedy: bool = False):
    if greedy:
        cfg = cfg or BeamConfig()
        return greedy_decode(model, sources, langs,
                             max_lens=_caps(sources, None, cfg.max_len_a, cfg.max_len_b))
    return beam_search(model, sources, langs, cfg)


def pivot_translate(model: NMTModel, sources, src: str, tgt: str, cfg: BeamConfig | None = None,
                    second: NMTModel | None = None, pivot: str = "en", greedy: bool = False) -> list[list[int]]:
    """Translate ``src -> pivot -> tgt``; ``second`` optionally serves the second hop."""
    if src == pivot or tgt == pivot:
        raise UsageError(f"pivot translation needs non-pivot endpoints, got {src}->{tgt} via {pivot}")
    if src == tgt:
        raise UsageError("source and target language are identical")
    second = second or model
    sources = list(sources)
    nonempty = [i for i, s in enumerate(sources) if len(s)]
    out: list[list[int]] = [[] for _ in sources]
    if not nonempty:
        return out
    hop1 = translate(model, [sources[i] for i in nonempty], [pivot], cfg, greedy)
    hop2 = translate(second, hop1, [tgt], cfg, greedy)
    for i, h in zip(nonempty, hop2):
        out[i] = h
    return out
