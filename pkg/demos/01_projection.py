"""
Projecting onto the orthogonal complement
=========================================

The accumulated gradient is projected away from the span of a microbatch's
per-sequence gradients. Two routes are available: an exact projection through
a reduced QR factorization, and a cheaper iterative deflation that sweeps over
normalized columns a fixed number of times.
"""
import numpy as np

from proma import linalg

rng = np.random.default_rng(0)
d, k = 64, 8
vecs = rng.standard_normal((d, k))      # columns: per-sequence gradients
acc = rng.standard_normal(d)            # accumulated gradient so far

# %% Exact projection: the result is orthogonal to every column
exact = linalg.project_to_complement(acc, vecs)
print("exact   max |V^T p| =", np.abs(vecs.T @ exact).max())

# the dropped part and the kept part are orthogonal (Pythagoras)
print("pythagoras gap      =", acc @ acc - exact @ exact - (acc - exact) @ (acc - exact))

# %% Iterative deflation converges linearly in the number of sweeps
units = vecs / np.linalg.norm(vecs, axis=0)
for passes in (1, 2, 4, 16, 64):
    approx = linalg.project_to_complement_iterative(acc, vecs, passes=passes)
    print(f"passes={passes:3d}  max overlap {np.abs(units.T @ approx).max():.2e}  "
          f"gap to exact {np.linalg.norm(approx - exact):.2e}")

# %% Counting work: exact projection is quadratic in k, deflation linear
for name, fn in (("exact", linalg.project_to_complement),
                 ("iterative", linalg.project_to_complement_iterative)):
    counter = linalg.FlopCounter()
    fn(acc, vecs, counter=counter)
    print(f"{name:9s} multiply-adds: {counter.multiply_adds}")

# %% Randomized bases for the dominant right-singular subspace
x = rng.standard_normal((40, 6)) @ np.diag([20, 15, 10, 1, 0.5, 0.1]) @ rng.standard_normal((6, 30))
q = linalg.approx_rank_r_basis(x, 3, rng=1)
s = np.linalg.svd(x, compute_uv=False)
print("captured top-3 energy:", np.linalg.norm(x @ q) ** 2 / np.sum(s[:3] ** 2))
