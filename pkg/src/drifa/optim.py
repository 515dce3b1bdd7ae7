"""Adam with bias correction and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingGrad
from .nn import Parameter


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Parameter], state: AdamState) -> None:
    """Apply one Adam update in place to every trainable parameter."""
    trainable = [p for p in params if p.trainable]
    for p in trainable:
        if p.grad is None:
            raise MissingGrad(f"parameter {p.name or '?'} has no gradient")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, p in enumerate(params):
        if not p.trainable:
            continue
        g = p.grad.astype(np.float64)
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[i] = m
        state.v[i] = v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, betas=betas, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        adam_step(self.params, self.state)


def grad_norm(params: list[Parameter]) -> float:
    """L2 norm over the gradients of trainable parameters only."""
    total = 0.0
    for p in params:
        if p.trainable and p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    lr: float = 1e-3
    factor: float = 0.2
    patience: int = 5
    min_lr: float = 1e-5
    best_metric: float = float("inf")
    epochs_since_improvement: int = 0

    def step(self, val_metric: float) -> float:
        if val_metric < self.best_metric:
            self.best_metric = val_metric
            self.epochs_since_improvement = 0
            return self.lr
        self.epochs_since_improvement += 1
        if self.epochs_since_improvement >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.epochs_since_improvement = 0
        return self.lr


def plateau_step(sched: PlateauScheduler, val_metric: float) -> float:
    return sched.step(val_metric)
