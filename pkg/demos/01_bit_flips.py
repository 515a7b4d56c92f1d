"""What one flipped bit does to a binary32 number."""
# %%
import numpy as np

from ssipp.bits import classify_bit, delta_class_bound, flip_float, float_to_bits, relative_error

x = np.float32(0.7853982)  # a typical mid-sized weight
print(f"x = {x!r}  bits = {float_to_bits(x):032b}")

# %% flip every bit once and look at the relative error
for bit in (31, 30, 29, 23, 22, 12, 0):
    y = flip_float(x, bit)
    rel = relative_error(x, y)
    print(f"{str(classify_bit(bit)):>6s} (bit {bit:2d}): {float(x):+.6g} -> {float(y):+.6g}   rel. error {rel:.3g}")

# %% each class has a predictable range; the most significant exponent bit is the dangerous one
for bit in (31, 30, 23, 22, 0):
    print(f"{str(classify_bit(bit)):>6s}: {delta_class_bound(x, bit)}")

# %% the ranges hold for arbitrary normal values, checked here on a random batch
rng = np.random.default_rng(0)
words = rng.integers(0x00800000, 0x7F000000, size=50_000, dtype=np.uint64).astype(np.uint32)
vals = words.view(np.float32)
for bit in (31, 30, 22):
    rel = relative_error(vals, (words ^ np.uint32(1 << bit)).view(np.float32))
    finite = rel[np.isfinite(rel)]
    print(f"bit {bit}: min {finite.min():.3g}  max {finite.max():.3g}  overflowed {np.sum(~np.isfinite(rel))}")
