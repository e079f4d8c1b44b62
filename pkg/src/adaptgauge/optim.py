"""SGD and Adam over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .autodiff import Value


class Optimizer:
    def __init__(self, params: dict[str, Value], lr: float):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        raise NotImplementedError


class FrozenOptimizer(Optimizer):
    """No-op stand-in used when a pipeline run sets learning rate 0."""

    def __init__(self, params):
        self.params = params
        self.lr = 0.0

    def step(self):
        pass


class SGD(Optimizer):
    def step(self):
        for p in self.params.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(params: dict[str, Value], max_norm: float) -> float:
    """Scale all grads so their global L2 norm does not exceed max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def make_optimizer(kind: str, params: dict[str, Value], lr: float) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer kind: {kind!r}")
