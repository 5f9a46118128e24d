"""Count Sketch and compact bilinear pooling, checked numerically.

Run:  python demos/01_sketch_pooling.py
"""
# %% imports
import numpy as np

from grounder.numerics import circular_convolve, fft
from grounder.sketch import count_sketch, make_sketch_params, mcb_pool

rng = np.random.default_rng(0)

# %% A sketch preserves inner products on average.
x = rng.normal(size=32)
y = x + 0.7 * rng.normal(size=32)
for dim in (8, 32, 128):
    est = [count_sketch(x, p) @ count_sketch(y, p)
           for p in (make_sketch_params(s, 32, dim) for s in range(500))]
    print(f"sketch_dim={dim:4d}  <x,y>={x @ y:8.3f}  mean={np.mean(est):8.3f}  std={np.std(est):7.3f}")

# %% The FFT is radix-2; a spike spreads evenly over all frequencies.
print("fft of an impulse:", np.round(fft([1, 0, 0, 0, 0, 0, 0, 0]).real, 3))
print("shift by one:     ", circular_convolve([1, 2, 3, 0], [0, 1, 0, 0]).round(6))

# %% MCB on a 1x1 map equals sketching the explicit outer product.
pt, pv = make_sketch_params(1, 5, 16), make_sketch_params(2, 7, 16)
t, v = rng.normal(size=5), rng.normal(size=(1, 1, 7))
hashed = (pt.bucket[:, None] + pv.bucket[None, :]) % 16
signs = pt.sign[:, None] * pv.sign[None, :]
explicit = np.bincount(hashed.ravel(), weights=(signs * np.outer(t, v[0, 0])).ravel(), minlength=16)
fast = mcb_pool(t, v, pt, pv, normalize=False)[0, 0]
print("max |fft path - explicit| =", np.abs(fast - explicit).max())

# %% With normalization every pixel descriptor is a unit vector.
phi = mcb_pool(t, rng.normal(size=(4, 4, 7)), pt, pv)
print("pixel norms:", np.linalg.norm(phi, axis=2).round(12).ravel()[:6], "...")
