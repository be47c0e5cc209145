"""A short tour of the autograd engine everything else is built on.

Run: python demos/01_autograd_tour.py
"""

import numpy as np

from deepfake_vit import tensor as T
from deepfake_vit.tensor import Tensor

rng = np.random.default_rng(0)

# Operations record themselves on whichever Tape is active. Outside a tape
# (or inside no_grad) nothing is recorded and tensors are plain arrays.
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
x = Tensor(rng.normal(size=(4, 3)))

with T.Tape() as tape:
    h = T.gelu(T.matmul(x, w))
    loss = T.softmax(h, axis=-1).sum() * 0.5 + T.sigmoid(h).mean()

print(f"recorded {len(tape)} operations, loss = {loss.item():.6f}")
T.backward(loss, tape)
print("d loss / d w =\n", np.round(w.grad, 6))

# The same gradient by central differences.
def f():
    with T.no_grad():
        hh = T.gelu(T.matmul(x, w))
        return (T.softmax(hh, axis=-1).sum() * 0.5 + T.sigmoid(hh).mean()).item()

num = np.zeros_like(w.data)
for i in np.ndindex(w.shape):
    old = w.data[i]
    w.data[i] = old + 1e-5
    hi = f()
    w.data[i] = old - 1e-5
    lo = f()
    w.data[i] = old
    num[i] = (hi - lo) / 2e-5
print(f"max |analytic - numeric| = {np.max(np.abs(num - w.grad)):.2e}")

# Softmax is shift invariant and does not overflow.
print("softmax([1000, 1000]) =", T.softmax(Tensor([1000.0, 1000.0])).data)

# GELU here is the tanh approximation; at x = 3 it is within 1e-3 of x * Phi(x).
print("gelu(3) =", T.gelu(Tensor(3.0)).item())
