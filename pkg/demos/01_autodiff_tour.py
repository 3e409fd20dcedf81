"""A short tour of the autodiff core: the tape, detach and a gradient check.

Run:  python3 demos/01_autodiff_tour.py
"""

import numpy as np

from c3rl import tensor as T

# A leaf that records gradients, and a small expression built from it.
x = T.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
y = (x * x).sum()
T.backward(y)
print("d/dx sum(x*x)       =", x.grad, "(expected 2x)")

# detach cuts one branch of the product: only the live factor receives gradient.
T.reset_tape()
x.grad = None
z = (x * T.detach(x)).sum()
T.backward(z)
print("d/dx sum(x*detach(x)) =", x.grad, "(expected x)")

# no_grad evaluates forward values without touching the tape.
with T.no_grad():
    w = T.softmax_last(x)
print("softmax under no_grad:", np.round(w.data, 4), "requires_grad =", w.requires_grad)

# Central finite differences against the tape for a three-op chain.
rng = np.random.default_rng(0)
a = rng.uniform(-2, 2, size=(3, 4))
b = rng.uniform(-2, 2, size=(4, 2))


def f(a_, b_):
    return T.gelu_approx(T.matmul(a_, b_)).sum()


T.reset_tape()
ta, tb = T.Tensor(a.copy(), requires_grad=True), T.Tensor(b.copy(), requires_grad=True)
T.backward(f(ta, tb))
h = 1e-5
num = np.zeros_like(a)
for i in np.ndindex(a.shape):
    up, dn = a.copy(), a.copy()
    up[i] += h
    dn[i] -= h
    with T.no_grad():
        num[i] = (f(T.Tensor(up), T.Tensor(b)).item() - f(T.Tensor(dn), T.Tensor(b)).item()) / (2 * h)
rel = np.abs(ta.grad - num) / np.maximum(np.maximum(np.abs(ta.grad), np.abs(num)), 1e-6)
print(f"gelu(a @ b) gradient check: worst relative error {rel.max():.2e}")
