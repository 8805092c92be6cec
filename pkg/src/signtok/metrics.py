"""Evaluation metrics and attention-memory accounting.

BLEU is corpus-level with clipped modified n-gram precision, geometric mean
over orders, brevity penalty, and no smoothing (a zero precision at any
order scores 0). ROUGE-L is the sentence-mean F1 over LCS precision/recall.
Alignment accuracy quantifies the diagonal structure of visual-token to
gloss-token similarity grids. Memory profiles count attention score elements
(batch * heads * length^2 per layer) analytically and can measure real peak
allocation of a forward/backward pass.
"""

from __future__ import annotations

import tracemalloc
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError


def _tokens(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hyps, refs, max_n: int = 4) -> float:
    """Corpus BLEU over orders 1..max_n with brevity penalty, unsmoothed."""
    if len(hyps) != len(refs):
        raise DataError("hypothesis/reference counts differ")
    if not hyps:
        raise DataError("empty corpus")
    hyps = [_tokens(h) for h in hyps]
    refs = [_tokens(r) for r in refs]
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    if hyp_len == 0:
        return 0.0
    log_p_sum = 0.0
    for n in range(1, max_n + 1):
        clipped = total = 0
        for h, r in zip(hyps, refs):
            hc = _ngram_counts(h, n)
            rc = _ngram_counts(r, n)
            total += sum(hc.values())
            clipped += sum(min(c, rc[g]) for g, c in hc.items())
        if clipped == 0 or total == 0:
            return 0.0
        log_p_sum += np.log(clipped / total)
    bp = 1.0 if hyp_len > ref_len else np.exp(1.0 - ref_len / hyp_len)
    return float(bp * np.exp(log_p_sum / max_n))


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l_f1(hyps, refs) -> float:
    """Mean over sentences of the LCS-based F1 score."""
    if len(hyps) != len(refs):
        raise DataError("hypothesis/reference counts differ")
    if not hyps:
        raise DataError("empty corpus")
    scores = []
    for h, r in zip(hyps, refs):
        h, r = _tokens(h), _tokens(r)
        lcs = _lcs_length(h, r) if h and r else 0
        if lcs == 0:
            scores.append(0.0)
            continue
        p = lcs / len(h)
        rec = lcs / len(r)
        scores.append(2 * p * rec / (p + rec))
    return float(np.mean(scores))


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l_f1: float
    num_sentences: int
    alignment_accuracy: float | None = None
    reduction_ratio: float | None = None

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1, "bleu2": self.bleu2, "bleu3": self.bleu3,
            "bleu4": self.bleu4, "rouge_l_f1": self.rouge_l_f1,
            "num_sentences": self.num_sentences,
            "alignment_accuracy": self.alignment_accuracy,
            "reduction_ratio": self.reduction_ratio,
        }

    def csv_row(self) -> str:
        return ",".join(
            f"{v:.6f}" if isinstance(v, float) else str(v)
            for v in (self.bleu1, self.bleu2, self.bleu3, self.bleu4,
                      self.rouge_l_f1, self.num_sentences)
        )


def evaluate_corpus(hyps, refs, alignment_accuracy_value: float | None = None,
                    reduction_ratio: float | None = None) -> EvalReport:
    return EvalReport(
        bleu1=corpus_bleu(hyps, refs, 1),
        bleu2=corpus_bleu(hyps, refs, 2),
        bleu3=corpus_bleu(hyps, refs, 3),
        bleu4=corpus_bleu(hyps, refs, 4),
        rouge_l_f1=rouge_l_f1(hyps, refs),
        num_sentences=len(hyps),
        alignment_accuracy=alignment_accuracy_value,
        reduction_ratio=reduction_ratio,
    )


def alignment_accuracy(grids: list[np.ndarray], gloss_ids: list[list[int]],
                       token_truth_ids: list[list[int]]) -> float:
    """Fraction of visual tokens whose argmax gloss matches their true sign word.

    grids[i] is the (N_i, M_i) similarity grid of video i against its own
    sentence; token_truth_ids[i][a] is the vocabulary id of token a's sign.
    Tokens whose true word does not appear among the pair's gloss tokens are
    excluded from the denominator (they have no valid match to find).
    """
    matched = correct = 0
    for grid, glosses, truth in zip(grids, gloss_ids, token_truth_ids):
        grid = np.asarray(grid)
        if grid.shape != (len(truth), len(glosses)):
            raise DataError(
                f"grid shape {grid.shape} does not match tokens {len(truth)} x glosses {len(glosses)}"
            )
        for a, true_id in enumerate(truth):
            if true_id not in glosses:
                continue
            matched += 1
            if glosses[int(grid[a].argmax())] == true_id:
                correct += 1
    if matched == 0:
        raise DataError("no visual token has a matching gloss")
    return correct / matched


# ---------------------------------------------------------------------------
# Attention-memory accounting


@dataclass
class MemoryProfile:
    sequence_length: int
    layers: int
    heads: int
    batch: int
    model_dim: int
    ff_mult: int
    score_elements_per_layer: int
    score_elements_total: int
    activation_elements: int
    bytes_fp32: int
    measured_peak_bytes: int | None = None

    def csv_row(self) -> str:
        fields = [self.sequence_length, self.layers, self.heads, self.batch,
                  self.score_elements_per_layer, self.score_elements_total,
                  self.activation_elements, self.bytes_fp32,
                  self.measured_peak_bytes if self.measured_peak_bytes is not None else ""]
        return ",".join(str(f) for f in fields)


MEMORY_CSV_HEADER = ("sequence_length,layers,heads,batch,score_elements_per_layer,"
                     "score_elements_total,activation_elements,bytes_fp32,"
                     "measured_peak_bytes")


def attention_memory_profile(length: int, layers: int, heads: int, batch: int,
                             model_dim: int = 1024, ff_mult: int = 4,
                             measure: bool = False) -> MemoryProfile:
    """Analytic element counts for a transformer encoder at one sequence length.

    Score elements follow batch * heads * length^2 exactly per layer; the
    activation count tallies the per-layer residual/attention/FFN tensors
    (2 copies of the score tensor for logits + softmax, 6 width-D token
    tensors, 2 FFN hidden tensors).
    """
    if min(length, heads, batch, model_dim) < 1 or layers < 0:
        raise DataError("profile arguments must be positive (layers may be 0)")
    score_per_layer = batch * heads * length * length
    token_elems = batch * length * model_dim
    per_layer_acts = 2 * score_per_layer + 6 * token_elems + 2 * batch * length * model_dim * ff_mult
    activation_elements = layers * per_layer_acts + token_elems
    measured = None
    if measure:
        measured = measure_encoder_peak_bytes(length, layers, heads, batch,
                                              model_dim, ff_mult)
    return MemoryProfile(
        sequence_length=length, layers=layers, heads=heads, batch=batch,
        model_dim=model_dim, ff_mult=ff_mult,
        score_elements_per_layer=score_per_layer,
        score_elements_total=layers * score_per_layer,
        activation_elements=activation_elements,
        bytes_fp32=4 * (layers * score_per_layer + activation_elements),
        measured_peak_bytes=measured,
    )


def measure_encoder_peak_bytes(length: int, layers: int, heads: int, batch: int,
                               model_dim: int, ff_mult: int = 4) -> int:
    """Peak traced allocation of a real encoder forward/backward pass."""
    from .nncore import layers as L
    from .nncore import tensor as T

    rng = np.random.default_rng(0)
    enc = L.TransformerEncoder(layers, model_dim, heads, model_dim * ff_mult,
                               0.0, L.RngBox(0), rng, np.float32)
    x = rng.standard_normal((batch, length, model_dim)).astype(np.float32)
    tracemalloc.start()
    try:
        out = enc(T.Tensor(x))
        loss = T.tsum(T.mul(out, out))
        loss.backward()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    enc.zero_grad()
    return int(peak)


def quadratic_fit_r2(lengths, values) -> float:
    """R^2 of a quadratic least-squares fit values ~ a + b*L + c*L^2."""
    x = np.asarray(lengths, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if x.size < 3:
        raise DataError("quadratic fit needs at least three points")
    coeffs = np.polyfit(x, y, 2)
    pred = np.polyval(coeffs, x)
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0:
        return 1.0
    return 1.0 - ss_res / ss_tot
