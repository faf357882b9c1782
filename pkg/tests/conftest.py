import numpy as np
import pytest


def numeric_grad(f, tensor, eps=1e-5):
    """Central finite differences of a scalar-returning callable w.r.t. one
    tensor's entries (mutated in place and restored)."""
    flat = tensor.data.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(tensor.data.shape)


def rel_err(approx, exact):
    approx = np.asarray(approx)
    exact = np.asarray(exact)
    scale = max(np.abs(exact).max(), 1e-8)
    return np.abs(approx - exact).max() / scale


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
