# optim.py
"""First-order optimizers updating Param data in place."""
import logging

import numpy as np

from errors import ConfigError
from numeric_core import zero_grad

logger = logging.getLogger(__name__)

OPTIMIZER_EPS = 1e-8


class Optimizer:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        zero_grad(self.params)

    def step(self):
        raise NotImplementedError


class SGD(Optimizer):
    """Plain gradient descent."""

    def step(self):
        for p in self.params:
            p.data -= self.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=OPTIMIZER_EPS):
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class RMSProp(Optimizer):
    def __init__(self, params, lr=5e-5, decay=0.99, eps=OPTIMIZER_EPS):
        super().__init__(params, lr)
        self.decay = decay
        self.eps = eps
        self.sq = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, sq in zip(self.params, self.sq):
            sq *= self.decay
            sq += (1.0 - self.decay) * p.grad * p.grad
            p.data -= self.lr * p.grad / (np.sqrt(sq) + self.eps)


OPTIMIZERS = {'sgd': SGD, 'adam': Adam, 'rmsprop': RMSProp}


def build_optimizer(name, params, lr):
    params = list(params)
    try:
        cls = OPTIMIZERS[name]
    except KeyError:
        raise ConfigError(f"unknown optimizer '{name}', expected one of {sorted(OPTIMIZERS)}")
    logger.debug(f"Building {name} optimizer over {len(params)} tensors, lr={lr}")
    return cls(params, lr=lr)
