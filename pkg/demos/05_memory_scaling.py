"""Attention memory accounting: why shorter token sequences pay off twice.

Attention score tensors grow as batch * heads * L^2 per layer, so halving
the sequence length cuts score memory 4x. Compressing 0.25-ratio frame
downsampling to a 0.129-ratio sign tokenization shrinks the quadratic term
by (0.25/0.129)^2 = 3.76. The measured peak allocation of a real
forward/backward pass follows the same quadratic trend.
"""

from signtok.metrics import attention_memory_profile, quadratic_fit_r2

print("analytic accounting (2 layers, 4 heads, batch 2, width 64):")
profiles = {}
for length in (16, 32, 64, 128, 256):
    prof = attention_memory_profile(length, layers=2, heads=4, batch=2,
                                    model_dim=64)
    profiles[length] = prof
    print(f"  L={length:4d}: score elements/layer = {prof.score_elements_per_layer:9d}"
          f"   fp32 bytes = {prof.bytes_fp32:12,d}")

print("\nscore-element ratio L vs L/2:",
      profiles[64].score_elements_per_layer / profiles[32].score_elements_per_layer)

hi, lo = 2500, 1290  # lengths proportional to reduction ratios 0.25 and 0.129
ratio = (attention_memory_profile(hi, 1, 1, 1).score_elements_per_layer
         / attention_memory_profile(lo, 1, 1, 1).score_elements_per_layer)
print(f"quadratic-term ratio at reduction 0.25 vs 0.129: {ratio:.3f}")

print("\nmeasured peak allocation of a real forward/backward:")
lengths = (16, 32, 64, 128)
peaks = []
for length in lengths:
    prof = attention_memory_profile(length, layers=2, heads=4, batch=2,
                                    model_dim=64, measure=True)
    peaks.append(prof.measured_peak_bytes)
    print(f"  L={length:4d}: peak = {prof.measured_peak_bytes:12,d} bytes")
print(f"quadratic fit R^2 over the sweep: {quadratic_fit_r2(lengths, peaks):.4f}")
