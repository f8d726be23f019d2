"""Adam with bias correction, the inverse-square-root warmup schedule, clipping."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .tensor import Parameter


def noam_lr(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[np.ndarray | None],
    lr: float,
    step: int,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> None:
    """In-place bias-corrected Adam update; ``step`` counts from 1."""
    if step < 1:
        raise ValueError(f"Adam step counter starts at 1, got {step}")
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.value)
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        m_hat = p.adam_m / c1
        v_hat = p.adam_v / c2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad *= factor
    return norm
