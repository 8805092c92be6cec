"""Segment videos into sign units and compare reduction strategies.

The motion-energy segmenter places boundaries at strict local minima of the
smoothed per-frame feature difference, then dissolves spans shorter than
min_len by removing their weakest (highest-energy) boundary. On noiseless
fixed-duration renderings it recovers the true boundaries exactly; with
noise it stays close. Uniform chunking and the frame-level baselines
(max pooling, strided downsampling, sliding window) give the reference
reduction ratios.
"""

import numpy as np

from signtok.corpus import SyntheticSpec, generate_synthetic
from signtok.segmenter import (
    corpus_boundary_f1,
    motion_energy,
    reduce_baseline,
    reduction_report,
    segment_motion_energy,
    segment_oracle,
    segment_uniform,
    smooth_energy,
)

# -- exact recovery on clean data -------------------------------------------
clean = SyntheticSpec(duration_range=(8, 8), noise_sigma=0.0, seed=3)
frames, _, truths = generate_synthetic(clean, 30)
preds = [segment_motion_energy(f) for f in frames]
oracle = [segment_oracle(t) for t in truths]
p, r, f1 = corpus_boundary_f1(preds, oracle, tol=0)
print(f"noiseless d=8: boundary precision={p:.3f} recall={r:.3f} f1={f1:.3f}")

video = frames[0]
e = smooth_energy(motion_energy(video.frames), 3)
print("smoothed energy, first 20 frames:",
      np.array2string(e[:20], precision=3))
print("recovered spans:", [(s.start, s.end) for s in preds[0].spans])

# -- noisy corpus at the default noise level ---------------------------------
noisy = SyntheticSpec(seed=4)
frames, _, truths = generate_synthetic(noisy, 100)
preds = [segment_motion_energy(f) for f in frames]
oracle = [segment_oracle(t) for t in truths]
p, r, f1 = corpus_boundary_f1(preds, oracle, tol=2)
print(f"\ndefault noise, +-2 frames: precision={p:.3f} recall={r:.3f} f1={f1:.3f}")

# -- reduction ratios ---------------------------------------------------------
print("\nreduction ratios over 100 videos:")
print(f"  sign-unit tokens : {reduction_report(oracle).ratio:.4f}")
print(f"  motion-energy    : {reduction_report(preds).ratio:.4f}")
uniform4 = [segment_uniform(f, factor=4) for f in frames]
print(f"  uniform factor 4 : {reduction_report(uniform4).ratio:.4f}")

# frame-level baselines shrink the feature matrix directly
feats = frames[0].frames
for strat in ("maxpool", "stride", "window"):
    out = reduce_baseline(feats, strat, factor=4, window=4)
    print(f"  {strat:8s} output: {feats.shape} -> {out.shape}")
