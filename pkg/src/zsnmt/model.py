"""Target-language-tagged Transformer encoder-decoder.

The encoder reads ``[<2t>, x]``. Layer normalization is post-residual. With
``use_laln`` every norm site (encoder and decoder) takes its gain and bias
from a per-target-language table. With ``use_lalt`` the decoder attends to
``H @ W[t]`` instead of ``H``, with one ``d x d`` matrix per target language.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, LanguageError, SequenceError
from .tensor import Tensor
from .vocab import BOS, EOS, PAD, TrainingInstance

NEG_INF = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    languages: tuple[str, ...]
    tag_ids: tuple[int, ...]
    d_model: int = 512
    d_ff: int = 2048
    heads: int = 8
    layers: int = 6
    use_laln: bool = False
    use_lalt: bool = False
    merged_attention: bool = False
    dropout: float = 0.1
    attention_dropout: float = 0.1
    ln_epsilon: float = 1e-6
    dtype: str = "float32"
    pad_id: int = PAD
    bos_id: int = BOS
    eos_id: int = EOS

    def __post_init__(self):
        self.languages = tuple(self.languages)
        self.tag_ids = tuple(int(i) for i in self.tag_ids)
        if self.merged_attention:
            raise ConfigError("merged_attention: merged attention is not implemented; use standard decoder attention")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by heads ({self.heads})")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        for name in ("dropout", "attention_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if len(self.tag_ids) != len(self.languages):
            raise ConfigError("one tag id per language is required")
        if not self.languages:
            raise ConfigError("at least one language is required")
        if any(not 0 <= i < self.vocab_size for i in self.tag_ids):
            raise ConfigError("tag ids must be inside the vocabulary")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def norm_sites(self) -> int:
        # two per encoder layer, three per decoder layer
        return 5 * self.layers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["languages"] = list(self.languages)
        d["tag_ids"] = list(self.tag_ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def signature(self) -> tuple:
        """Everything that determines parameter names and shapes."""
        return (self.vocab_size, self.languages, self.d_model, self.d_ff, self.heads, self.layers,
                self.use_laln, self.use_lalt)


# ----------------------------------------------------------------------
# parameter layout
# ----------------------------------------------------------------------
def _attn_shapes(prefix: str, d: int) -> dict:
    out = {}
    for w in ("q", "k", "v", "o"):
        out[f"{prefix}.w{w}"] = (d, d)
        out[f"{prefix}.b{w}"] = (d,)
    return out


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, ff, V, nl = config.d_model, config.d_ff, config.vocab_size, len(config.languages)
    norm = (nl, d) if config.use_laln else (d,)
    shapes: dict[str, tuple[int, ...]] = {"embed": (V, d)}
    for side, sublayers in (("enc", ("self",)), ("dec", ("self", "cross"))):
        for i in range(config.layers):
            p = f"{side}.{i}"
            for s in sublayers:
                shapes.update(_attn_shapes(f"{p}.{s}", d))
            shapes[f"{p}.ffn.w1"] = (d, ff)
            shapes[f"{p}.ffn.b1"] = (ff,)
            shapes[f"{p}.ffn.w2"] = (ff, d)
            shapes[f"{p}.ffn.b2"] = (d,)
            for j in range(len(sublayers) + 1):
                shapes[f"{p}.ln{j}.g"] = norm
                shapes[f"{p}.ln{j}.b"] = norm
    if config.use_lalt:
        shapes["lalt.w"] = (nl, d, d)
    shapes["out.w"] = (d, V)
    shapes["out.b"] = (V,)
    return shapes


def _component(name: str, config: ModelConfig) -> str:
    if name == "embed":
        return "embedding"
    if name.startswith("out."):
        return "output"
    if name == "lalt.w":
        return "lalt"
    if ".ln" in name:
        return "laln" if config.use_laln else "layer_norm"
    side = "encoder" if name.startswith("enc.") else "decoder"
    kind = "ffn" if ".ffn." in name else "attention"
    return f"{side}_{kind}"


def param_count(config: ModelConfig) -> dict[str, int]:
    """Exact parameter totals per component plus ``total``."""
    counts: dict[str, int] = {}
    for name, shape in param_shapes(config).items():
        comp = _component(name, config)
        counts[comp] = counts.get(comp, 0) + int(np.prod(shape))
    counts["total"] = sum(counts.values())
    return counts


def init_depth_scaled(config: ModelConfig, base_std: float | None = None, seed: int = 0) -> dict[str, Tensor]:
    """Initialise parameters; weights in layer ``l`` (1-based) get std ``base_std / sqrt(l)``.

    Embedding and output weights use ``base_std``. Biases start at 0, norm
    gains at 1, and LALT bridges at the identity.
    """
    if base_std is None:
        base_std = config.d_model ** -0.5
    if base_std <= 0:
        raise ConfigError("base_std must be positive")
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "lalt.w":
            arr = np.broadcast_to(np.eye(config.d_model), shape).copy()
        elif leaf == "g":
            arr = np.ones(shape)
        elif leaf.startswith("b"):
            arr = np.zeros(shape)
        else:
            std = base_std
            if name.startswith(("enc.", "dec.")):
                std = base_std / math.sqrt(int(name.split(".")[1]) + 1)
            arr = rng.standard_normal(shape) * std
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


def layer_of(name: str) -> int | None:
    """1-based layer index of a parameter name, or None for non-layer tensors."""
    if name.startswith(("enc.", "dec.")):
        return int(name.split(".")[1]) + 1
    return None


# ----------------------------------------------------------------------
# batches
# ----------------------------------------------------------------------
@dataclass
class Batch:
    src: np.ndarray        # (B, Tx) without tag, PAD-padded
    tgt_in: np.ndarray     # (B, Ty) BOS + y[:-1]
    tgt_out: np.ndarray    # (B, Ty) y (ends in EOS), PAD-padded
    langs: np.ndarray      # (B,) target language index

    @property
    def size(self) -> int:
        return len(self.langs)

    @property
    def target_tokens(self) -> int:
        return int((self.tgt_out != PAD).sum())


def pad_sequences(seqs: Sequence[Sequence[int]], pad: int = PAD, min_len: int = 0) -> np.ndarray:
    width = max([len(s) for s in seqs] + [min_len])
    out = np.full((len(seqs), width), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def make_batch(instances: Sequence[TrainingInstance]) -> Batch:
    src = pad_sequences([ins.src for ins in instances])
    tgt_out = pad_sequences([ins.tgt for ins in instances])
    tgt_in = pad_sequences([[BOS] + list(ins.tgt[:-1]) for ins in instances])
    langs = np.array([ins.lang for ins in instances], dtype=np.int64)
    return Batch(src, tgt_in, tgt_out, langs)


def sinusoid_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : (d - d // 2)])
    return table


# ----------------------------------------------------------------------
# model
# ----------------------------------------------------------------------
@dataclass
class EncoderOutput:
    states: Tensor          # (B, Tx+1, d), tag position first
    pad_mask: np.ndarray    # (B, Tx+1) True where padding
    langs: np.ndarray


@dataclass
class DecoderState:
    """Incremental decoding cache for a batch of hypotheses."""

    langs: np.ndarray
    key_bias: np.ndarray                     # (B, 1, 1, Tx+1) additive mask
    cross: list[tuple[Tensor, Tensor]]       # per layer (k, v)
    self_kv: list[tuple[np.ndarray, np.ndarray] | None] = field(default_factory=list)
    position: int = 0

    def reorder(self, index: np.ndarray) -> "DecoderState":
        idx = np.asarray(index, dtype=np.int64)
        return DecoderState(
            langs=self.langs[idx],
            key_bias=self.key_bias[idx],
            cross=[(Tensor(k.data[idx]), Tensor(v.data[idx])) for k, v in self.cross],
            self_kv=[None if kv is None else (kv[0][idx], kv[1][idx]) for kv in self.self_kv],
            position=self.position,
        )


class NMTModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None,
                 base_std: float | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_depth_scaled(config, base_std, seed)
        expected = param_shapes(config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigError(f"parameter set mismatch (missing={missing[:3]}, unexpected={extra[:3]})")
        self._pe = sinusoid_table(256, config.d_model).astype(config.dtype)
        self._dtype = np.dtype(config.dtype)

    # --- bookkeeping ---------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self.params.items():
            p.data = np.asarray(arrays[k], dtype=self._dtype).reshape(p.shape).copy()

    def copy(self) -> "NMTModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return NMTModel(self.config, params)

    def lang_ids(self, langs) -> np.ndarray:
        out = []
        for t in np.atleast_1d(langs):
            if isinstance(t, str):
                if t not in self.config.languages:
                    raise LanguageError(f"unknown language {t!r}")
                out.append(self.config.languages.index(t))
            else:
                if not 0 <= int(t) < len(self.config.languages):
                    raise LanguageError(f"unknown language index {t}")
                out.append(int(t))
        return np.array(out, dtype=np.int64)

    def _positions(self, start: int, length: int) -> np.ndarray:
        if start + length > len(self._pe):
            self._pe = sinusoid_table(2 * (start + length), self.config.d_model).astype(self._dtype)
        return self._pe[start:start + length]

    def _embed(self, ids: np.ndarray, start: int = 0) -> Tensor:
        scale = math.sqrt(self.config.d_model)
        e = T.gather(self.params["embed"], ids) * scale
        return e + self._positions(start, ids.shape[1])

    def _norm(self, name: str, x: Tensor, langs: np.ndarray) -> Tensor:
        g, b = self.params[name + ".g"], self.params[name + ".b"]
        if self.config.use_laln:
            shape = (len(langs), 1, self.config.d_model)
            g = T.gather(g, langs).reshape(shape)
            b = T.gather(b, langs).reshape(shape)
        return T.layer_norm(x, g, b, self.config.ln_epsilon)

    def _split(self, x: Tensor) -> Tensor:
        B, L, d = x.shape
        h = self.config.heads
        return x.reshape(B, L, h, d // h).transpose(0, 2, 1, 3)

    def _merge(self, x: Tensor) -> Tensor:
        B, h, L, dk = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, L, h * dk)

    def _project(self, prefix: str, w: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{prefix}.w{w}"] + self.params[f"{prefix}.b{w}"]

    def _attend(self, prefix, q: Tensor, k: Tensor, v: Tensor, bias, training, rng) -> Tensor:
        dk = self.config.d_model // self.config.heads
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
        if bias is not None:
            scores = scores + bias
        weights = T.dropout(T.softmax(scores), self.config.attention_dropout, rng, training)
        return self._project(prefix, "o", self._merge(weights @ v))

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = T.relu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"])
        return h @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]

    def _residual(self, x: Tensor, sub: Tensor, training, rng) -> Tensor:
        return x + T.dropout(sub, self.config.dropout, rng, training)

    # --- encoder -------------------------------------------------------
    def encode_batch(self, src: np.ndarray, langs, training: bool = False,
                     rng: np.random.Generator | None = None) -> EncoderOutput:
        langs = self.lang_ids(langs)
        src = np.asarray(src, dtype=np.int64)
        if src.ndim == 1:
            src = src.reshape(len(langs), -1)
        tags = np.asarray(self.config.tag_ids, dtype=np.int64)[langs][:, None]
        ids = np.concatenate([tags, src], axis=1)
        pad_mask = ids == self.config.pad_id
        bias = np.where(pad_mask, NEG_INF, 0.0).astype(self._dtype)[:, None, None, :]
        h = T.dropout(self._embed(ids), self.config.dropout, rng, training)
        for i in range(self.config.layers):
            p = f"enc.{i}"
            q = self._split(self._project(f"{p}.self", "q", h))
            k = self._split(self._project(f"{p}.self", "k", h))
            v = self._split(self._project(f"{p}.self", "v", h))
            h = self._norm(f"{p}.ln0", self._residual(h, self._attend(f"{p}.self", q, k, v, bias, training, rng),
                                                      training, rng), langs)
            h = self._norm(f"{p}.ln1", self._residual(h, self._ffn(f"{p}.ffn", h), training, rng), langs)
        return EncoderOutput(h, pad_mask, langs)

    def encode(self, x: Sequence[int], t) -> EncoderOutput:
        """Encode one sentence for translation into language ``t``."""
        if len(x) == 0:
            raise SequenceError("cannot encode an empty source sentence")
        return self.encode_batch(np.asarray([list(x)]), [t])

    def memory(self, enc: EncoderOutput) -> Tensor:
        """What the decoder attends to: ``H`` or ``H @ W[t]``."""
        if not self.config.use_lalt:
            return enc.states
        return enc.states @ T.gather(self.params["lalt.w"], enc.langs)

    # --- decoder -------------------------------------------------------
    def _cross_kv(self, i: int, mem: Tensor) -> tuple[Tensor, Tensor]:
        p = f"dec.{i}.cross"
        return self._split(self._project(p, "k", mem)), self._split(self._project(p, "v", mem))

    def _decoder_stack(self, h: Tensor, langs, self_bias, key_bias, cross, training, rng, cache=None) -> Tensor:
        for i in range(self.config.layers):
            p = f"dec.{i}"
            q = self._split(self._project(f"{p}.self", "q", h))
            k = self._split(self._project(f"{p}.self", "k", h))
            v = self._split(self._project(f"{p}.self", "v", h))
            if cache is not None:
                if cache.self_kv[i] is not None:
                    pk, pv = cache.self_kv[i]
                    k = Tensor(np.concatenate([pk, k.data], axis=2))
                    v = Tensor(np.concatenate([pv, v.data], axis=2))
                cache.self_kv[i] = (k.data, v.data)
            a = self._attend(f"{p}.self", q, k, v, self_bias, training, rng)
            h = self._norm(f"{p}.ln0", self._residual(h, a, training, rng), langs)
            cq = self._split(self._project(f"{p}.cross", "q", h))
            ck, cv = cross[i]
            a = self._attend(f"{p}.cross", cq, ck, cv, key_bias, training, rng)
            h = self._norm(f"{p}.ln1", self._residual(h, a, training, rng), langs)
            h = self._norm(f"{p}.ln2", self._residual(h, self._ffn(f"{p}.ffn", h), training, rng), langs)
        return h

    def _logits(self, h: Tensor) -> Tensor:
        return h @ self.params["out.w"] + self.params["out.b"]

    def decode_batch(self, tgt_in: np.ndarray, enc: EncoderOutput, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        """Teacher-forced decoder pass; returns logits of shape (B, Ty, V)."""
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        Ty = tgt_in.shape[1]
        mem = self.memory(enc)
        key_bias = np.where(enc.pad_mask, NEG_INF, 0.0).astype(self._dtype)[:, None, None, :]
        causal = np.triu(np.full((Ty, Ty), NEG_INF, dtype=self._dtype), k=1)[None, None]
        cross = [self._cross_kv(i, mem) for i in range(self.config.layers)]
        h = T.dropout(self._embed(tgt_in), self.config.dropout, rng, training)
        h = self._decoder_stack(h, enc.langs, causal, key_bias, cross, training, rng)
        return self._logits(h)

    def decode(self, y: Sequence[int], enc: EncoderOutput, t=None) -> tuple[Tensor, Tensor]:
        """Teacher-forced single-sentence decode: returns (logits, decoder input ids).

        ``y`` is the target prefix without BOS; the decoder reads ``[BOS] + y``
        and logits row ``j`` scores the token after ``y[:j]``.
        """
        if t is not None and self.lang_ids([t])[0] != enc.langs[0]:
            raise LanguageError("decode language differs from the encoded target language")
        ids = np.asarray([[self.config.bos_id] + list(y)])
        return self.decode_batch(ids, enc), Tensor(ids)

    # --- training objective -------------------------------------------
    def loss(self, batch: Batch, label_smoothing: float = 0.1, training: bool = True,
             rng: np.random.Generator | None = None) -> Tensor:
        enc = self.encode_batch(batch.src, batch.langs, training, rng)
        logits = self.decode_batch(batch.tgt_in, enc, training, rng)
        return T.cross_entropy_smoothed(logits, batch.tgt_out, label_smoothing, ignore_index=self.config.pad_id)

    # --- incremental inference ----------------------------------------
    def start_decoding(self, enc: EncoderOutput) -> DecoderState:
        with T.no_grad():
            mem = self.memory(enc)
            cross = [self._cross_kv(i, mem) for i in range(self.config.layers)]
        key_bias = np.where(enc.pad_mask, NEG_INF, 0.0).astype(self._dtype)[:, None, None, :]
        return DecoderState(enc.langs, key_bias, cross, [None] * self.config.layers, 0)

    def step(self, state: DecoderState, tokens: np.ndarray) -> np.ndarray:
        """Feed one token per hypothesis; returns next-token log-probabilities (B, V).

        ``state`` is updated in place.
        """
        ids = np.asarray(tokens, dtype=np.int64).reshape(-1, 1)
        with T.no_grad():
            h = self._embed(ids, start=state.position)
            h = self._decoder_stack(h, state.langs, None, state.key_bias, state.cross, False, None, cache=state)
            logits = self._logits(h).data[:, 0, :]
        state.position += 1
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
