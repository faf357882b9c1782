"""A quick tour of the tensor engine: forward math, reverse-mode gradients,
and a finite-difference spot check.

Run: python3 demos/01_autodiff_basics.py
"""

import numpy as np

from clustvit import tensor as T
from clustvit.tensor import Tensor, backward

rng = np.random.default_rng(0)

# Tensors wrap float64 numpy arrays. Ops record onto a tape when any input
# asks for gradients.
x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)

logits = T.matmul(T.gelu(x), w)
targets = np.array([0, 1, 1, 0])
loss = T.cross_entropy(logits, targets)
print(f"loss = {loss.item():.6f}")

backward(loss)
print("dL/dw =\n", w.grad)

# Central finite differences against the same scalar, one coordinate.
eps = 1e-5
i, j = 1, 0
orig = w.data[i, j]


def loss_value():
    z = (0.5 * x.data * (1 + np.tanh(np.sqrt(2 / np.pi)
                                     * (x.data + 0.044715 * x.data ** 3)))) @ w.data
    lse = np.log(np.exp(z).sum(axis=1))
    return float((lse - z[np.arange(4), targets]).mean())


w.data[i, j] = orig + eps
up = loss_value()
w.data[i, j] = orig - eps
down = loss_value()
w.data[i, j] = orig

fd = (up - down) / (2 * eps)
print(f"analytic {w.grad[i, j]:.10f} vs finite-diff {fd:.10f}")
assert abs(fd - w.grad[i, j]) < 1e-8
print("gradient check ok")
