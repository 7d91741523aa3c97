"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    coords: Optional[Sequence[tuple]] = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` must rebuild the scalar loss from the current values of ``params``.
    ``coords`` optionally restricts the check to ``(param_index, flat_index)``
    pairs; by default every coordinate of every parameter is checked.
    Error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    if coords is None:
        coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + h
            fp = f().item()
            flat[j] = orig - h
            fm = f().item()
            flat[j] = orig
            num = (fp - fm) / (2.0 * h)
            a = analytic[i].reshape(-1)[j]
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    return worst
