import math

import numpy as np
import pytest

from streamattn import metrics


def test_token_accuracy_basics():
    assert metrics.token_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert metrics.token_accuracy([1, 9, 3], [1, 2, 3]) == pytest.approx(2 / 3)
    assert metrics.token_accuracy([], [1]) == 0.0
    assert metrics.token_accuracy([], []) == 1.0


def test_token_accuracy_length_mismatch_uses_max_len():
    assert metrics.token_accuracy([1, 2], [1, 2, 3, 4]) == pytest.approx(0.5)


def test_wait_k_al_closed_form():
    for k in (1, 3, 5, 7):
        for n in (k, k + 2, 12):
            g = [min(k + j, n) for j in range(n)]
            rep = metrics.lagging(np.array(g), n, n)
            assert rep.al == pytest.approx(k, abs=1e-12)
            assert rep.laal == pytest.approx(k, abs=1e-12)


def test_offline_trace_al_equals_n():
    # g(1) = |x| means tau = 1 and the single term is g(1) - 0 = n
    for n in (1, 4, 9):
        rep = metrics.lagging(np.full(n, n), n, n)
        assert rep.al == pytest.approx(n)


def test_laal_equals_al_when_lengths_match():
    g = np.array([2, 3, 4, 4])
    rep = metrics.lagging(g, 4, 4)
    assert rep.laal == pytest.approx(rep.al)


def test_laal_penalizes_over_generation_less():
    # hypothesis longer than reference: LAAL's gamma uses the longer length,
    # shrinking the subtracted ramp, so LAAL >= AL
    g = np.array([2, 3, 4, 4, 4, 4])
    rep = metrics.lagging(g, 4, 3)
    assert rep.laal >= rep.al


def test_lagging_independent_of_token_content():
    g = np.array([1, 2, 3])
    a = metrics.lagging(g, 3, 3)
    b = metrics.lagging(g.copy(), 3, 3)
    assert (a.al, a.laal) == (b.al, b.laal)


def test_lagging_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        metrics.lagging(np.array([]), 3, 3)
    with pytest.raises(ValueError):
        metrics.lagging(np.array([1]), 0, 3)


def test_corpus_lagging_means():
    traces = [np.array([1, 2, 3]), np.array([3, 3, 3])]
    rep = metrics.corpus_lagging(traces, [3, 3], [3, 3])
    assert rep.al == pytest.approx((1 + 3) / 2)
    assert len(rep.per_sentence) == 2


def test_bleu_perfect_match():
    hyps = [[3, 4, 5, 6, 7], [8, 9, 10, 11]]
    assert metrics.corpus_bleu(hyps, [list(h) for h in hyps]) == pytest.approx(100.0)


def test_bleu_hand_computed_single_pair():
    # p1 = 3/4 raw, p2 = 2/3 raw, p3 = 1/2 raw, p4 = 0 -> smoothed (0+1)/(1+1)
    expect = 100.0 * (3 / 4 * 2 / 3 * 1 / 2 * 1 / 2) ** 0.25
    got = metrics.corpus_bleu([[1, 2, 3, 4]], [[1, 2, 3, 5]])
    assert got == pytest.approx(expect, abs=1e-9)
    assert got == pytest.approx(59.4604, abs=1e-3)


def test_bleu_brevity_penalty_dominates_short_hyp():
    got = metrics.corpus_bleu([[1]], [list(range(1, 11))])
    assert 0 < got < 1
    assert got == pytest.approx(100.0 * math.exp(1 - 10) * 1.0, rel=0.5)


def test_bleu_zero_unigram_overlap_is_zero():
    assert metrics.corpus_bleu([[1, 2, 3, 4]], [[5, 6, 7, 8]]) == 0.0


def test_bleu_permutation_invariant():
    rng = np.random.default_rng(0)
    hyps = [rng.integers(3, 20, size=rng.integers(4, 10)).tolist() for _ in range(8)]
    refs = [rng.integers(3, 20, size=rng.integers(4, 10)).tolist() for _ in range(8)]
    base = metrics.corpus_bleu(hyps, refs)
    order = rng.permutation(8)
    shuffled = metrics.corpus_bleu([hyps[i] for i in order], [refs[i] for i in order])
    assert shuffled == pytest.approx(base, abs=1e-12)


def test_bleu_is_corpus_level_not_mean_of_sentences():
    hyps = [[1, 2], [1, 2, 3, 4, 5, 6]]
    refs = [[1, 2], [1, 2, 3, 4, 5, 7]]
    corpus = metrics.corpus_bleu(hyps, refs)
    mean_of_sent = np.mean([metrics.corpus_bleu([h], [r]) for h, r in zip(hyps, refs)])
    assert corpus != pytest.approx(mean_of_sent, abs=1e-6)


def test_bleu_rejects_empty_or_mismatched_corpora():
    with pytest.raises(ValueError):
        metrics.corpus_bleu([], [])
    with pytest.raises(ValueError):
        metrics.corpus_bleu([[1]], [[1], [2]])
