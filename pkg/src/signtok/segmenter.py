"""Temporal segmentation and sequence-reduction baselines.

Segment sources: ground-truth oracle spans, a motion-energy changepoint
heuristic, and uniform chunking; plus the feature-level reduction baselines
(max pooling, strided downsampling, sliding window) used for ratio
comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import FrameSequence, GroundTruth
from .errors import DataError

SEGMENT_SOURCES = ("oracle", "motion_energy", "uniform", "stride", "maxpool_groups", "window")


@dataclass(frozen=True)
class SegmentSpan:
    """Half-open frame interval [start, end)."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise DataError(f"invalid span [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class SegmentSet:
    """Ordered, non-overlapping spans for one video."""

    video_id: str
    spans: list[SegmentSpan]
    source: str
    num_frames: int

    def __post_init__(self):
        if self.source not in SEGMENT_SOURCES:
            raise DataError(f"unknown segment source {self.source!r}")
        prev = 0
        for sp in self.spans:
            if sp.start < prev:
                raise DataError(f"{self.video_id}: spans overlap or are unsorted")
            prev = sp.end
        if prev > self.num_frames:
            raise DataError(f"{self.video_id}: spans exceed num_frames")
        if self.source in ("oracle", "motion_energy", "uniform"):
            covered = sum(sp.length for sp in self.spans)
            if not self.spans or self.spans[0].start != 0 or prev != self.num_frames \
                    or covered != self.num_frames:
                raise DataError(f"{self.video_id}: {self.source} spans must partition [0, T)")

    @property
    def num_tokens(self) -> int:
        return len(self.spans)

    def interior_boundaries(self) -> list[int]:
        return [sp.start for sp in self.spans[1:]]


@dataclass
class ReductionReport:
    total_frames: int
    total_tokens: int

    @property
    def ratio(self) -> float:
        return self.total_tokens / self.total_frames


def segment_oracle(truth: GroundTruth) -> SegmentSet:
    spans = [SegmentSpan(s, e) for s, e in truth.spans]
    return SegmentSet(truth.video_id, spans, "oracle", truth.num_frames)


def motion_energy(frames: np.ndarray) -> np.ndarray:
    """Per-frame L2 feature difference; the first entry copies the second."""
    frames = np.asarray(frames, dtype=np.float64)
    e = np.linalg.norm(np.diff(frames, axis=0), axis=1)
    if e.size == 0:
        return np.zeros(1)
    return np.concatenate([[e[0]], e])


def smooth_energy(e: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with edge-truncated windows."""
    if window < 1 or window % 2 == 0:
        raise DataError("smooth_window must be a positive odd integer")
    half = window // 2
    padded = np.concatenate([np.full(half, np.nan), e, np.full(half, np.nan)])
    windows = np.lib.stride_tricks.sliding_window_view(padded, window)
    return np.nanmean(windows, axis=1)


def _strict_local_minima(s: np.ndarray) -> list[int]:
    t = np.arange(1, len(s) - 1)
    hit = (s[t] < s[t - 1]) & (s[t] < s[t + 1])
    return [int(i) for i in t[hit]]


def segment_motion_energy(video: FrameSequence, smooth_window: int = 3,
                          min_len: int = 5) -> SegmentSet:
    """Changepoint segmentation on smoothed motion energy.

    Boundaries sit at strict local minima of the smoothed energy; spans
    shorter than min_len are then dissolved greedily by removing their
    weakest (highest-energy) boundary, so strong low-energy boundaries
    survive the cleanup.
    """
    t_total = video.num_frames
    if t_total < min_len:
        raise DataError(f"{video.video_id}: video shorter than min_len")
    e = motion_energy(video.frames)
    s = smooth_energy(e, smooth_window)
    bounds = [b for b in _strict_local_minima(s) if 0 < b < t_total]

    cuts = [0] + bounds + [t_total]
    # Boundary strength: smoothed energy at the cut; video edges are not removable.
    while len(cuts) > 2:
        lengths = [cuts[i + 1] - cuts[i] for i in range(len(cuts) - 1)]
        short = [i for i, n in enumerate(lengths) if n < min_len]
        if not short:
            break
        i = min(short, key=lambda k: (lengths[k], k))
        left_removable = i > 0
        right_removable = i < len(lengths) - 1
        if left_removable and right_removable:
            drop = i if s[cuts[i]] >= s[cuts[i + 1]] else i + 1
        elif left_removable:
            drop = i
        else:
            drop = i + 1
        del cuts[drop]

    spans = [SegmentSpan(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]
    return SegmentSet(video.video_id, spans, "motion_energy", t_total)


def segment_uniform(video_or_id, num_frames: int | None = None, factor: int = 4) -> SegmentSet:
    """Contiguous groups of `factor` frames; the last group may be shorter."""
    if isinstance(video_or_id, FrameSequence):
        vid, t_total = video_or_id.video_id, video_or_id.num_frames
    else:
        vid, t_total = video_or_id, int(num_frames)
    if factor < 1:
        raise DataError("factor must be >= 1")
    spans = [SegmentSpan(a, min(a + factor, t_total)) for a in range(0, t_total, factor)]
    return SegmentSet(vid, spans, "uniform", t_total)


def reduce_baseline(features: np.ndarray, strategy: str, factor: int = 4,
                    window: int = 1) -> np.ndarray:
    """Frame-level reduction baselines: maxpool, stride, or sliding window mean."""
    features = np.asarray(features)
    if factor < 1 or window < 1:
        raise DataError("factor and window must be >= 1")
    n = features.shape[0]
    if strategy == "stride":
        return features[::factor].copy()
    if strategy == "maxpool":
        return np.stack([features[a:min(a + factor, n)].max(axis=0)
                         for a in range(0, n, factor)])
    if strategy == "window":
        return np.stack([features[a:min(a + window, n)].mean(axis=0)
                         for a in range(0, n, factor)])
    raise DataError(f"unknown reduction strategy {strategy!r}")


def reduction_report(segsets: list[SegmentSet]) -> ReductionReport:
    if not segsets:
        raise DataError("reduction_report needs at least one segment set")
    return ReductionReport(
        total_frames=sum(s.num_frames for s in segsets),
        total_tokens=sum(s.num_tokens for s in segsets),
    )


def boundary_f1(pred: SegmentSet, truth: SegmentSet, tol: int = 0):
    """Greedy nearest matching of interior boundaries within +-tol frames."""
    if pred.video_id != truth.video_id:
        raise DataError("boundary_f1 compares segmentations of the same video")
    pb = pred.interior_boundaries()
    tb = truth.interior_boundaries()
    if not pb and not tb:
        return 1.0, 1.0, 1.0
    pairs = sorted(
        ((abs(p - t), i, j) for i, p in enumerate(pb) for j, t in enumerate(tb)),
        key=lambda x: (x[0], x[1], x[2]),
    )
    used_p, used_t, matched = set(), set(), 0
    for d, i, j in pairs:
        if d > tol:
            break
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        matched += 1
    precision = matched / len(pb) if pb else 0.0
    recall = matched / len(tb) if tb else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def corpus_boundary_f1(preds: list[SegmentSet], truths: list[SegmentSet], tol: int = 0):
    """Micro-averaged boundary precision/recall/F1 over a corpus."""
    tp = fp = fn = 0
    by_id = {t.video_id: t for t in truths}
    for p in preds:
        t = by_id[p.video_id]
        pb, tb = p.interior_boundaries(), t.interior_boundaries()
        prec, rec, _ = boundary_f1(p, t, tol)
        m = round(prec * len(pb)) if pb else 0
        tp += m
        fp += len(pb) - m
        fn += len(tb) - m
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1
