"""SGD and Adam updates over lists of tensors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, ShapeError, StateError
from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: Optional[List[np.ndarray]] = None
    second_moment: Optional[List[np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate >= 0:
            raise InvalidInputError("learning_rate must be non-negative")


def _collect_grads(params: Sequence[Tensor], grads) -> List[np.ndarray]:
    if grads is None:
        grads = [p.grad for p in params]
    grads = list(grads)
    if len(grads) != len(params):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise StateError(f"parameter {i} has no gradient")
        if g.shape != p.shape:
            raise ShapeError(f"parameter {i}: grad {g.shape} vs param {p.shape}")
    return grads


def sgd_step(params: Sequence[Tensor], grads, state: OptimizerState) -> None:
    """p <- p - lr * g, in place. ``grads=None`` reads ``p.grad``."""
    grads = _collect_grads(params, grads)
    lr = state.learning_rate
    for p, g in zip(params, grads):
        p.data -= lr * g
    state.step_count += 1


def adam_step(params: Sequence[Tensor], grads, state: OptimizerState) -> None:
    """Bias-corrected Adam update, in place."""
    grads = _collect_grads(params, grads)
    if state.first_moment is None:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Optimizer:
    """Thin holder pairing a parameter list with its state."""

    def __init__(self, params: Sequence[Tensor], kind: str = "adam", lr: float = 1e-3, **kwargs):
        self.params = list(params)
        self.state = OptimizerState(kind=kind, learning_rate=lr, **kwargs)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        if self.state.kind == "sgd":
            sgd_step(self.params, None, self.state)
        else:
            adam_step(self.params, None, self.state)
