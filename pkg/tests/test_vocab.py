from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from zsnmt.errors import ConfigError, LanguageError, SequenceError
from zsnmt.model import ModelConfig, NMTModel
from zsnmt.vocab import (BOS, EOS, PAD, UNK, Vocabulary, apply_bpe, build_vocab, encode_instance, learn_bpe,
                         tag_token)

LANGS = ("en", "xa")


def test_small_corpus_keeps_everything():
    vocab = build_vocab(["a b", "c a"], 10, LANGS)
    assert [vocab.token(i) for i in range(4)] == ["<pad>", "<unk>", "<s>", "</s>"]
    assert {"a", "b", "c", "<2EN>", "<2XA>"} <= set(vocab.tokens)
    assert len(vocab) == 4 + 2 + 3
    assert vocab.token(vocab.num_reserved) == "a"  # most frequent first


def test_size_must_exceed_reserved_and_tags():
    with pytest.raises(ConfigError):
        build_vocab(["a"], 6, LANGS)


def test_oov_maps_to_unk_and_round_trip():
    vocab = build_vocab(["hello world", "hallo welt"], 20, LANGS)
    assert vocab.encode("hello mars") == [vocab.id("hello"), UNK]
    assert vocab.decode(vocab.encode("hallo world")) == "hallo world"


def test_tag_strings_in_text_are_not_tags():
    vocab = build_vocab(["a b"], 20, LANGS)
    assert vocab.encode("<2EN> a </s>") == [UNK, vocab.id("a"), UNK]


def test_bpe_hand_trace():
    # round 1 pair counts: (a,a)=2+1=3, (a,b)=1+1=2 -> merge "aa"
    # round 2 on [aa,a,b] and [aa,b]: (aa,a)=1, (a,b)=1, (aa,b)=1 -> first seen wins: (aa,a)
    merges = learn_bpe(Counter({"aaab": 1, "aab": 1}), 2)
    assert merges == [("a", "a"), ("aa", "a")]
    assert apply_bpe("aaab", merges) == ["aaa@@", "b"]
    assert apply_bpe("aab", merges) == ["aa@@", "b"]


def test_bpe_vocab_decodes_back():
    vocab = build_vocab(["aaab aab", "ab"], 30, LANGS, mode="bpe", merges=2)
    ids = vocab.encode("aaab aab ab")
    assert vocab.decode(ids) == "aaab aab ab"
    assert vocab.merges == [("a", "a"), ("a", "b")]  # the extra "ab" makes (a,b) the second merge


def test_save_load_keeps_ids(tmp_path):
    vocab = build_vocab(["x y z", "y z"], 20, LANGS, mode="bpe", merges=1)
    vocab.save(tmp_path / "v.json")
    back = Vocabulary.load(tmp_path / "v.json")
    assert back.tokens == vocab.tokens and back.merges == vocab.merges and back.tag_ids == vocab.tag_ids


def test_build_is_deterministic():
    corpus = ["d c b a", "a b", "c d"]
    assert build_vocab(corpus, 20, LANGS).tokens == build_vocab(corpus, 20, LANGS).tokens


def test_encode_instance_and_tag_at_model_input():
    vocab = build_vocab(["hallo", "hello"], 20, LANGS)
    ins = encode_instance("hallo", "hello", "en", vocab)
    assert ins.tgt == [vocab.id("hello"), EOS] and ins.lang == 0
    assert ins.src == [vocab.id("hallo")]
    cfg = ModelConfig(len(vocab), vocab.languages, vocab.tag_ids, d_model=8, d_ff=8, heads=2, layers=1)
    model = NMTModel(cfg)
    enc = model.encode_batch([ins.src], [ins.lang])
    assert enc.states.shape[1] == 2  # <2EN> + one token
    assert cfg.tag_ids[0] == vocab.id(tag_token("en")) == vocab.tag_id("en")


def test_encode_instance_errors():
    vocab = build_vocab(["a"], 20, LANGS)
    with pytest.raises(SequenceError):
        encode_instance("a", "   ", "en", vocab)
    with pytest.raises(LanguageError):
        encode_instance("a", "a", "zz", vocab)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.text(alphabet="abcd", min_size=1, max_size=6), min_size=1, max_size=8))
def test_in_vocabulary_round_trip(words):
    text = " ".join(words)
    vocab = build_vocab([text], 200, LANGS, mode="bpe", merges=3)
    assert vocab.decode(vocab.encode(text)) == text
