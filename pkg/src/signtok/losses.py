"""Contrastive and language-modeling objectives.

Token-level alignment aggregates per-pair cosine grids with a max-mean rule
in both directions, feeds the resulting batch similarity matrices through a
temperature-scaled InfoNCE, and combines the two alignment directions with
weight alpha. Dual-level supervision applies the same objective at the
embedding level (mapped visual tokens vs. lexical embeddings) and at the
hidden-state level (contextualized tokens on both sides), combined with
weight beta. A CLIP-style global baseline pools each sequence to one vector
first. The translation objective is label-smoothed cross-entropy over
non-padding steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .nncore import tensor as T
from .nncore.tensor import NEG_INF, Tensor


@dataclass
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.6
    label_smoothing: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError("alpha must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise DataError("beta must lie in [0, 1]")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise DataError("label_smoothing must lie in [0, 1)")


@dataclass
class SimilarityBatch:
    """Batch-level similarity matrices plus optional per-pair token grids."""

    z_v2t: Tensor                 # (B, B)
    z_t2v: Tensor                 # (B, B)
    tau: Tensor                   # positive scalar
    grids: list | None = None     # grids[i][j]: (N_i, M_j) ndarray, cosine


def token_similarity_aggregate(visual, vmask: np.ndarray, text, tmask: np.ndarray,
                               tau, keep_grids: bool = False) -> SimilarityBatch:
    """Max-mean aggregation of token-level cosine similarities.

    visual: (B, N_max, D) tensor with 0/1 mask (B, N_max); text likewise
    (C, M_max, D). Entry (i, j) of z_v2t averages, over video i's tokens,
    each token's best match among sentence j's tokens; z_t2v swaps the roles.
    Rectangular grids need no special casing, so unequal token counts are
    handled by construction.
    """
    vmask = np.asarray(vmask)
    tmask = np.asarray(tmask)
    if vmask.sum(axis=1).min() < 1 or tmask.sum(axis=1).min() < 1:
        raise DataError("every sequence needs at least one valid token")
    b, n, d = visual.shape
    c, m, _ = text.shape
    nv = T.l2_normalize(visual)
    nt = T.l2_normalize(text)
    flat = T.matmul(T.reshape(nv, (b * n, d)),
                    T.transpose(T.reshape(nt, (c * m, d)), (1, 0)))
    sim = T.transpose(T.reshape(flat, (b, n, c, m)), (0, 2, 1, 3))  # (B, C, N, M)

    dt = sim.dtype
    t_bias = ((1.0 - tmask.astype(dt)) * NEG_INF)[None, :, None, :]
    v_bias = ((1.0 - vmask.astype(dt)) * NEG_INF)[:, None, :, None]

    best_t = T.tmax(T.add(sim, Tensor(t_bias)), axis=3)            # (B, C, N)
    vw = vmask.astype(dt)
    v_counts = vw.sum(axis=1)
    z_v2t = T.mul(T.tsum(T.mul(best_t, Tensor(vw[:, None, :])), axis=2),
                  Tensor((1.0 / v_counts)[:, None]))

    best_v = T.tmax(T.add(sim, Tensor(v_bias)), axis=2)            # (B, C, M)
    tw = tmask.astype(dt)
    t_counts = tw.sum(axis=1)
    z_t2v = T.mul(T.tsum(T.mul(best_v, Tensor(tw[None, :, :])), axis=2),
                  Tensor((1.0 / t_counts)[None, :]))

    grids = None
    if keep_grids:
        grids = [
            [sim.data[i, j][vmask[i].astype(bool)][:, tmask[j].astype(bool)]
             for j in range(c)]
            for i in range(b)
        ]
    return SimilarityBatch(z_v2t, z_t2v, _as_tau(tau), grids)


def _as_tau(tau) -> Tensor:
    t = tau if isinstance(tau, Tensor) else Tensor(np.asarray(float(tau)))
    if float(t.data) <= 0:
        raise NumericalError("temperature must be positive")
    return t


def info_nce(z, tau, direction: str = "V2T"):
    """Symmetric InfoNCE over a square similarity matrix with logits z/tau."""
    if direction not in ("V2T", "T2V"):
        raise DataError(f"unknown InfoNCE direction {direction!r}")
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    if not np.isfinite(z.data).all():
        raise NumericalError("InfoNCE input contains non-finite similarities")
    b = z.shape[0]
    if z.shape != (b, b):
        raise DataError(f"InfoNCE needs a square matrix, got {z.shape}")
    logits = T.div(z, _as_tau(tau))
    diag = (np.arange(b), np.arange(b))
    row_terms = T.log_softmax(logits, axis=1)[diag]
    col_terms = T.log_softmax(logits, axis=0)[diag]
    return T.mul(T.add(T.tsum(row_terms), T.tsum(col_terms)), -1.0 / (2.0 * b))


def clcl_loss(batch: SimilarityBatch, alpha: float = 0.5):
    """Alpha-weighted sum of the two alignment directions."""
    if not 0.0 <= alpha <= 1.0:
        raise DataError("alpha must lie in [0, 1]")
    l_v2t = info_nce(batch.z_v2t, batch.tau, "V2T")
    l_t2v = info_nce(batch.z_t2v, batch.tau, "T2V")
    return T.add(T.mul(l_v2t, alpha), T.mul(l_t2v, 1.0 - alpha))


def dual_level_loss(l_ce, l_hs, beta: float = 0.6):
    """Beta-weighted sum of embedding-level and hidden-state-level losses."""
    if not 0.0 <= beta <= 1.0:
        raise DataError("beta must lie in [0, 1]")
    if isinstance(l_ce, Tensor) or isinstance(l_hs, Tensor):
        return T.add(T.mul(l_ce, beta), T.mul(l_hs, 1.0 - beta))
    return beta * l_ce + (1.0 - beta) * l_hs


def clip_global_loss(visual_summary, text_summary, tau):
    """InfoNCE over cosine similarities of pooled sequence summaries."""
    nv = T.l2_normalize(visual_summary)
    nt = T.l2_normalize(text_summary)
    z = T.matmul(nv, T.transpose(nt, (1, 0)))
    return info_nce(z, tau, "V2T")


def lm_loss(logits, targets: np.ndarray, smoothing: float = 0.0, pad_id: int = 0):
    """Label-smoothed cross-entropy, averaged over non-padding steps.

    The smoothed target puts 1 - eps on the gold token and eps/(d-1) on every
    other vocabulary entry.
    """
    targets = np.asarray(targets)
    d = logits.shape[-1]
    if targets.min() < 0 or targets.max() >= d:
        raise DataError(f"target id out of range [0, {d})")
    if not 0.0 <= smoothing < 1.0:
        raise DataError("smoothing must lie in [0, 1)")
    valid = (targets != pad_id).astype(logits.dtype)
    count = float(valid.sum())
    if count == 0:
        raise DataError("lm_loss: all target positions are padding")
    logp = T.log_softmax(logits, axis=-1)
    gold = T.reshape(T.gather_last(logp, targets[..., None]), targets.shape)
    if smoothing == 0.0:
        per_step = T.mul(gold, -1.0)
    else:
        off = smoothing / (d - 1)
        total = T.tsum(logp, axis=-1)
        per_step = T.sub(T.mul(gold, -(1.0 - smoothing - off)), T.mul(total, off))
    return T.mul(T.tsum(T.mul(per_step, Tensor(valid))), 1.0 / count)
