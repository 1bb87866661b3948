from typing import Iterable, List

import numpy as np

from autodiff.tensor import Parameter


class Optimizer:
    """Frozen parameters are excluded at construction and skipped at every step."""

    def __init__(self, params: Iterable[Parameter], lr: float):
        self.params: List[Parameter] = [p for p in params if not p.frozen]
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _active(self):
        return [p for p in self.params if not p.frozen and p.grad is not None]

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def step(self) -> None:
        for p in self._active():
            p.value = p.value - self.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.frozen or p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * p.grad * p.grad
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(method: str, params: Iterable[Parameter], lr: float) -> Optimizer:
    if method == "sgd":
        return SGD(params, lr)
    if method == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {method!r}")
