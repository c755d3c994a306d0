import math

import pytest
from hypothesis import given, strategies as st

from recurformer.bleu import corpus_bleu, ngrams


def test_identical_corpus():
    refs = [[5, 6, 7, 8, 9], [4, 4, 5, 6]]
    assert corpus_bleu(refs, refs) == pytest.approx(1.0)


def test_hand_counted_case():
    hyp, ref = "a a b c".split(), "a b c d".split()
    # clipped matches: unigrams 3/4, bigrams 2/3, trigrams 1/2, 4-grams 0/1
    assert corpus_bleu([hyp], [ref]) == 0.0
    assert corpus_bleu([hyp], [ref], max_n=3) == pytest.approx((3 / 4 * 2 / 3 * 1 / 2) ** (1 / 3), rel=1e-12)


def test_no_four_gram_overlap_is_zero():
    assert corpus_bleu([[1, 2, 3, 4]], [[1, 2, 3, 5]]) == 0.0


def test_brevity_penalty():
    assert corpus_bleu([list("abc")], [list("abcd")], max_n=2) == pytest.approx(math.exp(1 - 4 / 3))


def test_longer_hypothesis_has_no_penalty():
    assert corpus_bleu([list("abcde")], [list("abcd")], max_n=1) == pytest.approx(4 / 5)


def test_counts_pool_over_corpus():
    # unigram precision (2 + 1) / (2 + 2); second pair alone would have zero bigram matches
    hyps, refs = [["a", "b"], ["c", "x"]], [["a", "b"], ["c", "d"]]
    assert corpus_bleu(hyps, refs, max_n=2) == pytest.approx(math.sqrt(3 / 4 * 1 / 2))


def test_errors():
    with pytest.raises(ValueError, match="empty"):
        corpus_bleu([], [])
    with pytest.raises(ValueError):
        corpus_bleu([[1]], [[1], [2]])


def test_ngrams():
    assert ngrams([1, 1, 1], 2) == {(1, 1): 2}


@given(st.lists(st.lists(st.integers(4, 9), min_size=1, max_size=8), min_size=1, max_size=5),
       st.lists(st.lists(st.integers(4, 9), min_size=1, max_size=8), min_size=1, max_size=5))
def test_score_in_unit_interval(hyps, refs):
    n = min(len(hyps), len(refs))
    assert 0.0 <= corpus_bleu(hyps[:n], refs[:n]) <= 1.0 + 1e-12
