"""Differentiable primitives over :class:`Tensor`.

Each op computes its forward value with numpy and, when recording, attaches
a closure that pushes the output gradient into its inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import DTYPE, EmptySupportError, ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _push(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.accumulate(g)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value

    def backward(g):
        _push(a, _unbroadcast(g, a.shape))
        _push(b, _unbroadcast(g, b.shape))

    return make_result(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value - b.value

    def backward(g):
        _push(a, _unbroadcast(g, a.shape))
        _push(b, _unbroadcast(-g, b.shape))

    return make_result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.value, b.shape))

    return make_result(out, (a, b), backward)


def add_n(terms: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors as a single tape node."""
    terms = [as_tensor(t) for t in terms]
    out = terms[0].value.copy()
    for t in terms[1:]:
        if t.shape != out.shape:
            raise ShapeError(f"add_n shape mismatch: {out.shape} vs {t.shape}")
        out += t.value

    def backward(g):
        for t in terms:
            _push(t, g)

    return make_result(out, terms, backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.value.T)
        if b.requires_grad:
            b.accumulate(a.value.T @ g)

    return make_result(out, (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    out = np.transpose(a.value, axes)
    inverse = None if axes is None else np.argsort(axes)

    def backward(g):
        _push(a, np.transpose(g, inverse))

    return make_result(out, (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.value.reshape(shape)

    def backward(g):
        _push(a, g.reshape(a.shape))

    return make_result(out, (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            _push(p, piece)

    return make_result(out, parts, backward)


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.value[:, start:stop]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[:, start:stop] = g
            a.accumulate(full)

    return make_result(out, (a,), backward)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather ``a[idx]`` along the first axis (rows may repeat)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.value[idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            np.add.at(full, idx, g)
            a.accumulate(full)

    return make_result(out, (a,), backward)


def segment_sum(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` buckets given by ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((n_segments,) + a.shape[1:], dtype=DTYPE)
    np.add.at(out, segments, a.value)

    def backward(g):
        _push(a, g[segments])

    return make_result(out, (a,), backward)


def total(a: Tensor) -> Tensor:
    out = np.asarray(a.value.sum())

    def backward(g):
        _push(a, np.broadcast_to(g, a.shape))

    return make_result(out, (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.value.size
    out = np.asarray(a.value.mean())

    def backward(g):
        _push(a, np.broadcast_to(g / n, a.shape))

    return make_result(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)

    def backward(g):
        _push(a, g * out)

    return make_result(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.value)

    def backward(g):
        _push(a, g / a.value)

    return make_result(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def backward(g):
        _push(a, g * (1.0 - out * out))

    return make_result(out, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.value)

    def backward(g):
        _push(a, g * out * (1.0 - out))

    return make_result(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    active = a.value > 0
    out = np.where(active, a.value, 0.0)

    def backward(g):
        _push(a, g * active)

    return make_result(out, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    active = a.value > 0
    out = np.where(active, a.value, slope * a.value)

    def backward(g):
        _push(a, np.where(active, g, slope * g))

    return make_result(out, (a,), backward)


def softmax_values(x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax over the last axis; masked entries come out as 0."""
    if mask is None:
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise EmptySupportError("softmax row has every entry masked")
    masked = np.where(mask, x, -np.inf)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    a = as_tensor(a)
    out = softmax_values(a.value, mask)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _push(a, out * (g - inner))

    return make_result(out, (a,), backward)


def segment_softmax(scores: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Softmax of a 1-D score vector within each segment (e.g. per target node)."""
    segments = np.asarray(segments, dtype=np.int64)
    x = scores.value
    seg_max = np.full(n_segments, -np.inf)
    np.maximum.at(seg_max, segments, x)
    e = np.exp(x - seg_max[segments])
    denom = np.zeros(n_segments)
    np.add.at(denom, segments, e)
    out = e / denom[segments]

    def backward(g):
        inner = np.zeros(n_segments)
        np.add.at(inner, segments, g * out)
        _push(scores, out * (g - inner[segments]))

    return make_result(out, (scores,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Row-wise normalization with denominator sqrt(var + eps), then affine."""
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def backward(g):
        if gain.requires_grad:
            gain.accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias.accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gh = g * gain.value
            d = v.shape[-1]
            gx = inv / d * (
                d * gh
                - gh.sum(axis=-1, keepdims=True)
                - xhat * (gh * xhat).sum(axis=-1, keepdims=True)
            )
            x.accumulate(gx)

    return make_result(out, (x, gain, bias), backward)


def log_softmax_values(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def smoothed_cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    smoothing: float,
) -> tuple[Tensor, float]:
    """Mean cross-entropy of row-wise softmax against a label-smoothed target.

    The target distribution puts ``1 - smoothing`` on the gold id and
    ``smoothing / (V - 1)`` on every other id. Returns the loss tensor and the
    plain (unsmoothed) mean NLL as a float.
    """
    targets = np.asarray(targets, dtype=np.int64)
    t, vocab = logits.shape
    if targets.shape != (t,):
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    logp = log_softmax_values(logits.value)
    rows = np.arange(t)
    if vocab > 1:
        q = np.full((t, vocab), smoothing / (vocab - 1))
    else:
        q = np.zeros((t, vocab))
    q[rows, targets] = 1.0 - smoothing if vocab > 1 else 1.0
    loss = -(q * logp).sum() / t
    nll = float(-logp[rows, targets].mean())

    def backward(g):
        _push(logits, g * (np.exp(logp) - q) / t)

    return make_result(np.asarray(loss), (logits,), backward), nll


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        _push(a, g * keep)

    return make_result(a.value * keep, (a,), backward)
