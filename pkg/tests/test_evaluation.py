import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zsnmt.errors import EvaluationError
from zsnmt.evaluation import (UNDETERMINED, CharNgramDetector, DirectionResult, EvalReport, VocabularyDetector,
                              bleu_corpus, language_accuracy, pearson, tokenize_13a, win_ratio)


def brute_force_bleu(hyps, refs):
    """Independent oracle: list scans instead of counters, smoothing written out."""
    matches, totals = [0] * 4, [0] * 4
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht, rt = h.split(), r.split()
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, 5):
            hg = [tuple(ht[i:i + n]) for i in range(len(ht) - n + 1)]
            rg = [tuple(rt[i:i + n]) for i in range(len(rt) - n + 1)]
            totals[n - 1] += len(hg)
            available = list(rg)
            for g in hg:
                if g in available:
                    available.remove(g)
                    matches[n - 1] += 1
    log_sum, k, used = 0.0, 1, 0
    for n in range(4):
        if totals[n] == 0:
            continue
        used += 1
        if matches[n] == 0:
            k *= 2
            p = 100.0 / (k * totals[n])
        else:
            p = 100.0 * matches[n] / totals[n]
        log_sum += math.log(p)
    bp = 1.0 if hyp_len >= ref_len else (math.exp(1 - ref_len / hyp_len) if hyp_len else 0.0)
    return bp * math.exp(log_sum / used) if used else 0.0


def test_identity_scores_100():
    lines = ["a b c d e", "f g h i"]
    assert bleu_corpus(lines, lines) == pytest.approx(100.0)


def test_worked_brevity_example():
    # all modified precisions are 1; BP = exp(1 - 5/4)
    assert bleu_corpus(["a b c d"], ["a b c d e"]) == pytest.approx(100 * math.exp(1 - 5 / 4), abs=1e-4)
    assert bleu_corpus(["a b c d"], ["a b c d e"]) == pytest.approx(77.88, abs=1e-2)


def test_short_corpus_uses_available_orders():
    assert bleu_corpus(["a"], ["a"]) == pytest.approx(100.0)
    assert bleu_corpus(["a b"], ["a c"]) == pytest.approx(100 * math.sqrt(0.5 * 0.5))


def test_matches_oracle_on_100_random_corpora():
    rng = np.random.default_rng(0)
    alphabet = list("abcdef")
    for _ in range(100):
        n = int(rng.integers(1, 5))
        hyps = [" ".join(rng.choice(alphabet, size=rng.integers(1, 9))) for _ in range(n)]
        refs = [" ".join(rng.choice(alphabet, size=rng.integers(1, 9))) for _ in range(n)]
        assert bleu_corpus(hyps, refs) == pytest.approx(brute_force_bleu(hyps, refs), abs=1e-6)


def test_empty_or_mismatched_corpus():
    with pytest.raises(EvaluationError):
        bleu_corpus([], [])
    with pytest.raises(EvaluationError):
        bleu_corpus(["a"], ["a", "b"])


def test_13a_splits_punctuation():
    assert tokenize_13a("Hello, world!") == "Hello , world !"
    assert bleu_corpus(["Hello, world!"], ["Hello , world !"], tokenize="13a") == pytest.approx(100.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.lists(st.sampled_from("abc"), min_size=1, max_size=6),
                          st.lists(st.sampled_from("abc"), min_size=1, max_size=6)), min_size=1, max_size=5),
       st.randoms(use_true_random=False))
def test_bleu_range_and_order_invariance(pairs, rnd):
    hyps = [" ".join(h) for h, _ in pairs]
    refs = [" ".join(r) for _, r in pairs]
    score = bleu_corpus(hyps, refs)
    assert 0.0 <= score <= 100.0 + 1e-9
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    assert bleu_corpus([hyps[i] for i in order], [refs[i] for i in order]) == pytest.approx(score, abs=1e-9)
    assert bleu_corpus(hyps, hyps) == pytest.approx(100.0)


TABLE = {"a1": "A", "a2": "A", "a3": "A", "b1": "B", "b2": "B"}


def test_vocabulary_detector_votes():
    det = VocabularyDetector(TABLE, ["A", "B"])
    d = det.detect("a1 a2 a3")
    assert (d.lang, d.confidence) == ("A", 1.0)
    d = det.detect("a1 a2 a3 b1 b2")
    assert (d.lang, d.confidence) == ("A", pytest.approx(0.6))
    assert det.detect("zz yy").lang == UNDETERMINED
    with pytest.raises(EvaluationError):
        det.detect("   ")


def test_language_accuracy_manual_count():
    det = VocabularyDetector(TABLE, ["A", "B"])
    hyps = ["a1 a2", "b1", "a3 b1 b2", "", "zz", "a1"] * 3 + ["b2 b1", "a2"]
    manual = sum(1 for h in hyps if h and sum(t in ("a1", "a2", "a3") for t in h.split()) >
                 sum(t in ("b1", "b2") for t in h.split()) and "zz" not in h)
    assert len(hyps) == 20
    assert language_accuracy(hyps, "A", det) == pytest.approx(manual / 20)


def test_source_copy_counts_as_off_target():
    det = VocabularyDetector(TABLE, ["A", "B"])
    assert language_accuracy(["a1 a2", "a3"], "B", det) == 0.0


def test_char_ngram_detector():
    det = CharNgramDetector().fit({"en": ["the cat sat on the mat", "where is the house"],
                                   "de": ["der hund ist gross", "wo ist das haus"]})
    assert det.detect("the house").lang == "en"
    assert det.detect("das haus ist gross").lang == "de"
    assert 0.5 < det.detect("the mat").confidence <= 1.0


def test_win_ratio():
    ref = {"a": 1.0, "b": 2.0, "c": 3.0, "d": 4.0}
    assert win_ratio(ref, ref) == 0.0
    assert win_ratio({"a": 2.0, "b": 3.0, "c": 4.0, "d": 4.0}, ref) == 75.0
    with pytest.raises(EvaluationError):
        win_ratio({"a": 1.0}, ref)


def test_win_ratio_on_94_mock_directions():
    rng = np.random.default_rng(1)
    keys = [f"en-l{i}" for i in range(94)]
    a = {k: float(rng.integers(0, 30)) for k in keys}
    b = {k: float(rng.integers(0, 30)) for k in keys}
    wins = 0
    for k in keys:
        if a[k] > b[k]:
            wins += 1
    assert win_ratio(a, b) == pytest.approx(100 * wins / 94)
    assert win_ratio(a, b) + win_ratio(b, a) <= 100.0


def test_pearson_direct_formula():
    rng = np.random.default_rng(2)
    xs, ys = rng.standard_normal(10), rng.standard_normal(10)
    n = len(xs)
    num = n * sum(x * y for x, y in zip(xs, ys)) - sum(xs) * sum(ys)
    den = math.sqrt(n * sum(x * x for x in xs) - sum(xs) ** 2) * math.sqrt(n * sum(y * y for y in ys) - sum(ys) ** 2)
    assert pearson(xs, ys) == pytest.approx(num / den, abs=1e-10)
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [-2, -4, -6]) == pytest.approx(-1.0)
    with pytest.raises(EvaluationError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(EvaluationError):
        pearson([1], [1])


def test_direction_result_ranges():
    with pytest.raises(EvaluationError):
        DirectionResult("a", "b", 101.0, 0.5, 1)
    with pytest.raises(EvaluationError):
        DirectionResult("a", "b", 10.0, 1.5, 1)


def test_report_aggregates_and_records():
    dirs = [DirectionResult("en", "xa", 60.0, 1.0, 10), DirectionResult("xa", "en", 70.0, 1.0, 10),
            DirectionResult("xa", "xb", 5.0, 0.2, 10), DirectionResult("xb", "xa", 15.0, 0.6, 10)]
    rep = EvalReport(dirs, ["xa-xb", "xb-xa"], "demo")
    assert rep.bleu_all == 65.0 and rep.bleu_zero == 10.0 and rep.acc_zero == pytest.approx(0.4)
    assert rep.correlation() == pytest.approx(1.0)
    text = rep.to_records(rep)
    assert "direction=xa-xb kind=zero" in text and "win_ratio=0.0000" in text
    assert "BLEU_zero" in rep.table()
