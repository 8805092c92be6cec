import numpy as np
import pytest

from signtok.errors import DataError
from signtok.metrics import (
    EvalReport,
    alignment_accuracy,
    attention_memory_profile,
    corpus_bleu,
    evaluate_corpus,
    measure_encoder_peak_bytes,
    quadratic_fit_r2,
    rouge_l_f1,
)


def test_bleu_identity_corpus():
    sents = [["a", "b", "c", "d"], ["x", "y"]]
    for n in (1, 2, 3, 4):
        assert corpus_bleu(sents, sents, n) == 1.0


def test_bleu_hand_case_brevity_penalty():
    hyp = [["the", "cat", "sat"]]
    ref = [["the", "cat", "sat", "down"]]
    expected = np.exp(-1.0 / 3.0)  # all precisions 1, BP = exp(1 - 4/3)
    assert corpus_bleu(hyp, ref, 3) == pytest.approx(expected, abs=1e-9)
    assert corpus_bleu(hyp, ref, 3) == pytest.approx(0.7165, abs=1e-4)


def test_bleu_disjoint_zero():
    assert corpus_bleu([["a", "b"]], [["c", "d"]], 4) == 0.0


def test_bleu_clipping():
    # "the the the" vs "the cat": clipped unigram count is 1 of 3, and the
    # hypothesis is longer than the reference so no brevity penalty applies
    assert corpus_bleu([["the", "the", "the"]], [["the", "cat"]], 1) == \
        pytest.approx(1 / 3, abs=1e-9)


def test_bleu_monotone_in_order():
    hyps = [["a", "b", "c", "x"], ["d", "e", "f"]]
    refs = [["a", "b", "c", "d"], ["d", "e", "g"]]
    scores = [corpus_bleu(hyps, refs, n) for n in (1, 2, 3)]
    assert scores[0] >= scores[1] >= scores[2]


def test_bleu_reorder_invariance():
    hyps = [["a", "b"], ["c", "d", "e"], ["f"]]
    refs = [["a", "x"], ["c", "d", "y"], ["f"]]
    fwd = corpus_bleu(hyps, refs, 2)
    rev = corpus_bleu(hyps[::-1], refs[::-1], 2)
    assert fwd == pytest.approx(rev, abs=1e-12)
    assert rouge_l_f1(hyps, refs) == pytest.approx(
        rouge_l_f1(hyps[::-1], refs[::-1]), abs=1e-12)


def test_bleu_validation():
    with pytest.raises(DataError):
        corpus_bleu([], [], 4)
    with pytest.raises(DataError):
        corpus_bleu([["a"]], [], 4)


def test_rouge_identity_and_disjoint():
    sents = [["a", "b", "c"]]
    assert rouge_l_f1(sents, sents) == 1.0
    assert rouge_l_f1([["a", "b"]], [["c", "d"]]) == 0.0


def test_rouge_hand_case():
    # LCS("a b c", "a c b") = 2 -> P = R = 2/3
    assert rouge_l_f1([["a", "b", "c"]], [["a", "c", "b"]]) == \
        pytest.approx(2 / 3, abs=1e-9)
    assert rouge_l_f1([["a", "b", "c"]], [["a", "c", "b"]]) == \
        pytest.approx(0.6667, abs=1e-4)


def test_rouge_one_iff_exact():
    assert rouge_l_f1([["a", "b"], ["c"]], [["a", "b"], ["c"]]) == 1.0
    assert rouge_l_f1([["a", "b"], ["c", "d"]], [["a", "b"], ["c"]]) < 1.0


def test_evaluate_corpus_report():
    rep = evaluate_corpus([["a", "b", "c", "d"]], [["a", "b", "c", "d"]])
    assert rep.bleu4 == 1.0 and rep.rouge_l_f1 == 1.0 and rep.num_sentences == 1
    d = rep.to_dict()
    assert set(d) >= {"bleu1", "bleu4", "rouge_l_f1", "num_sentences"}
    assert len(rep.csv_row().split(",")) == 6


def test_alignment_accuracy_permutation_grid():
    # grid equal to the truth permutation matrix scores 1.0
    glosses = [[7, 9, 8]]
    truth = [[9, 7, 8]]
    grid = np.zeros((3, 3))
    grid[0, 1] = 1.0  # token 0 is sign 9, at gloss position 1
    grid[1, 0] = 1.0
    grid[2, 2] = 1.0
    assert alignment_accuracy([grid], glosses, truth) == 1.0


def test_alignment_accuracy_tie_breaks_low_index():
    glosses = [[4, 5]]
    truth = [[4, 5]]
    grid = np.zeros((2, 2))  # uniform: argmax picks index 0
    assert alignment_accuracy([grid], glosses, truth) == 0.5


def test_alignment_accuracy_unmatched_excluded():
    glosses = [[4]]
    truth = [[4, 6]]  # token 1's word is absent from the glosses
    grid = np.ones((2, 1))
    assert alignment_accuracy([grid], glosses, truth) == 1.0
    with pytest.raises(DataError):
        alignment_accuracy([np.ones((1, 1))], [[5]], [[9]])


def test_memory_profile_quadratic_scaling():
    a = attention_memory_profile(64, layers=2, heads=4, batch=3)
    b = attention_memory_profile(32, layers=2, heads=4, batch=3)
    assert a.score_elements_per_layer == 3 * 4 * 64 * 64
    assert a.score_elements_per_layer / b.score_elements_per_layer == 4.0
    assert a.score_elements_total == 2 * a.score_elements_per_layer
    zero = attention_memory_profile(64, layers=0, heads=4, batch=3)
    assert zero.score_elements_total == 0


def test_memory_ratio_connects_reduction_ratios():
    # sequence lengths proportional to reduction ratios 0.25 vs 0.129
    l_hi, l_lo = 2500, 1290
    a = attention_memory_profile(l_hi, 1, 1, 1)
    b = attention_memory_profile(l_lo, 1, 1, 1)
    ratio = a.score_elements_per_layer / b.score_elements_per_layer
    assert ratio == pytest.approx((0.25 / 0.129) ** 2, abs=1e-6)
    assert ratio == pytest.approx(3.76, abs=0.01)


def test_measured_peak_quadratic_fit():
    lengths = [16, 32, 64, 96, 128]
    peaks = [measure_encoder_peak_bytes(l, layers=2, heads=4, batch=2,
                                        model_dim=32) for l in lengths]
    assert all(p2 > p1 for p1, p2 in zip(peaks, peaks[1:]))
    assert quadratic_fit_r2(lengths, peaks) >= 0.95


def test_quadratic_fit_exact():
    x = [1, 2, 3, 4, 5]
    y = [2 + 3 * t + 4 * t * t for t in x]
    assert quadratic_fit_r2(x, y) == pytest.approx(1.0, abs=1e-9)
