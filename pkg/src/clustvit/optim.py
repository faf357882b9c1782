"""Parameters, weight init, and SGD with momentum under polynomial lr decay."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class Parameter:
    tensor: Tensor
    name: str
    velocity: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = np.zeros_like(self.tensor.data)


def glorot_uniform(rng, shape, fan_in, fan_out):
    """Uniform in +-sqrt(6 / (fan_in + fan_out)) from the given generator."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def make_param(store, rng, name, shape, fan_in=None, fan_out=None, zero=False):
    """Create, register, and return a trainable parameter tensor."""
    if any(p.name == name for p in store):
        raise ValueError(f"duplicate parameter name: {name}")
    if zero:
        data = np.zeros(shape)
    else:
        if fan_in is None:
            fan_in = shape[0] if len(shape) == 2 else 1
        if fan_out is None:
            fan_out = shape[-1]
        data = glorot_uniform(rng, shape, fan_in, fan_out)
    t = Tensor(data, requires_grad=True)
    store.append(Parameter(t, name))
    return t


@dataclass
class LrSchedule:
    """Polynomial decay from base_lr to min_lr over total_iters."""

    base_lr: float = 0.001
    min_lr: float = 0.0001
    power: float = 0.9
    total_iters: int = 1

    def __post_init__(self):
        if not (self.base_lr > self.min_lr >= 0.0):
            raise ValueError(f"need base_lr > min_lr >= 0, got {self.base_lr}, {self.min_lr}")
        if self.power <= 0.0:
            raise ValueError(f"power must be positive, got {self.power}")
        if self.total_iters < 1:
            raise ValueError(f"total_iters must be positive, got {self.total_iters}")

    def lr(self, t):
        if t >= self.total_iters:
            return self.min_lr
        frac = 1.0 - t / self.total_iters
        return (self.base_lr - self.min_lr) * frac ** self.power + self.min_lr


def sgd_step(params, schedule, it, momentum=0.9, weight_decay=0.0005):
    """One SGD update; returns the lr used. Gradients are zeroed afterwards.

    velocity <- momentum * velocity + grad + weight_decay * param
    param    <- param - lr * velocity
    """
    lr = schedule.lr(it)
    for p in params:
        g = p.tensor.grad
        if g is None:
            continue
        p.velocity *= momentum
        p.velocity += g
        if weight_decay:
            p.velocity += weight_decay * p.tensor.data
        p.tensor.data -= lr * p.velocity
        p.tensor.zero_grad()
    return lr


def zero_grads(params):
    for p in params:
        p.tensor.zero_grad()
