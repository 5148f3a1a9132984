"""SGD with momentum and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .errors import ConfigError
from .tensor import Parameter


def cosine_lr(t: int, total: int, lr0: float) -> float:
    """lr0 * 0.5 * (1 + cos(pi * t / total)); lr0 at t=0, 0 at t=total."""
    if not 0 <= t <= total:
        raise ConfigError(f"cosine_lr step {t} outside [0,{total}]")
    if lr0 <= 0:
        raise ConfigError(f"cosine_lr needs lr0 > 0; got {lr0}")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float = 0.0) -> None:
    """v <- momentum*v + g; p <- p - lr*v.  Parameters without grads are skipped."""
    for p in params:
        g = p.tensor.grad
        if g is None:
            continue
        if p.velocity is None:
            p.velocity = np.zeros_like(p.data)
        p.velocity *= momentum
        p.velocity += g
        p.data[...] -= (lr * p.velocity).astype(p.data.dtype, copy=False)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
