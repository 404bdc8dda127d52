"""Tour of the numerics core: reverse-mode gradients on dense tensors and
counter-based random streams.

Run: python demos/01_gradients_and_streams.py
"""
import numpy as np

from seqdiff import RngStream, backward, finite_diff_grad
from seqdiff import autodiff as ad
from seqdiff.gradcheck import run as gradcheck_run

# -- a small composite function, differentiated two ways ------------------
rng = RngStream(seed=42)
x = ad.Tensor(rng.normal((3, 4)))
w = ad.Tensor(rng.normal((4, 2)))

loss = ad.tmean(ad.square(ad.tanh(ad.matmul(x, w))))
grads = backward(loss)

def f(values):
    return float(np.mean(np.tanh(values @ w.data) ** 2))

numeric = finite_diff_grad(f, x.data, h=1e-5)
print("max |backward - finite difference|:", np.abs(grads.wrt(x) - numeric).max())

# -- streams: replayable, splittable randomness ---------------------------
stream = RngStream(seed=7, stream=1)
a = stream.normal((4,))
replay = RngStream(seed=7, stream=1).normal((4,))
print("replay identical:", np.array_equal(a, replay))

child_a = stream.child("worker", 0).normal((3,))
child_b = stream.child("worker", 1).normal((3,))
print("children differ:", not np.array_equal(child_a, child_b))

# -- the full verification suite ------------------------------------------
report = gradcheck_run(n_graphs=50)
print("gradcheck:", {k: v for k, v in report.items() if k != "graphs"})
