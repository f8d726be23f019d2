"""Central finite-difference gradient checking against the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tape, Tensor


class EvaluationError(ArithmeticError):
    pass


def _scalar(t: Tensor) -> float:
    val = float(np.asarray(t.value).reshape(-1)[0]) if t.value.size == 1 else None
    if val is None:
        raise EvaluationError(f"objective must be scalar, got shape {t.shape}")
    if not np.isfinite(val):
        raise EvaluationError(f"objective is not finite: {val}")
    return val


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar objective from the current parameter values.
    With ``max_coords`` set, only that many coordinates per parameter are
    probed (chosen by ``rng``); otherwise every coordinate is. ``floor``
    bounds the error denominator from below so gradients that vanish exactly
    are not judged against finite-difference round-off.
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = f()
        _scalar(out)
        tape.backward(out)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        ga_flat = ga.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = _scalar(f())
            flat[i] = orig - eps
            down = _scalar(f())
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            err = float(relative_error(np.array(ga_flat[i]), np.array(numeric), floor))
            worst = max(worst, err)
    return worst
