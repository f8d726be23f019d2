"""Neural building blocks: parameter containers, linear/FFN/GRU, positions."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Parameter, ShapeError, Tensor


class Module:
    """Attribute-walking parameter container.

    Parameters, sub-modules and lists of sub-modules assigned as attributes are
    discovered in assignment order, which keeps parameter names stable.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def new_weight(rng, name: str, d_in: int, d_out: int) -> Parameter:
    return Parameter(name, glorot(rng, d_in, d_out))


def new_bias(name: str, d: int) -> Parameter:
    return Parameter(name, np.zeros(d))


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    if x.value.ndim != 2 or W.value.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    out = ops.matmul(x, W)
    return out if b is None else ops.add(out, b)


def softmax(e, mask=None) -> Tensor:
    return ops.softmax(e, mask)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    return ops.layer_norm(x, gain, bias, eps)


def ffn(x: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    if W1.shape[1] != W2.shape[0] or x.shape[1] != W1.shape[0] or W2.shape[1] != b2.shape[-1]:
        raise ShapeError(f"ffn: x {x.shape}, W1 {W1.shape}, W2 {W2.shape} do not chain")
    return linear(ops.relu(linear(x, W1, b1)), W2, b2)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.W = new_weight(rng, "W", d_in, d_out)
        if bias:
            self.b = new_bias("b", d_out)
        self._bias = bias

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.W, self.b if self._bias else None)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-6):
        self.gain = Parameter("gain", np.ones(d))
        self.bias = Parameter("bias", np.zeros(d))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self._eps)


class FeedForward(Module):
    def __init__(self, rng, d: int, d_ff: int):
        self.W1 = new_weight(rng, "W1", d, d_ff)
        self.b1 = new_bias("b1", d_ff)
        self.W2 = new_weight(rng, "W2", d_ff, d)
        self.b2 = new_bias("b2", d)

    def __call__(self, x: Tensor) -> Tensor:
        return ffn(x, self.W1, self.b1, self.W2, self.b2)


class GRUCell(Module):
    """GRU cell: out = (1 - z) * h + z * candidate.

    Gate weights are packed column-wise as [update | reset | candidate].
    """

    def __init__(self, rng, d_x: int, d_h: int):
        self.Wx = Parameter("Wx", np.concatenate([glorot(rng, d_x, d_h) for _ in range(3)], axis=1))
        self.Wh = Parameter("Wh", np.concatenate([glorot(rng, d_h, d_h) for _ in range(3)], axis=1))
        self.b = Parameter("b", np.zeros(3 * d_h))
        self.d_h = d_h

    def __call__(self, h_prev: Tensor, x: Tensor) -> Tensor:
        return gru_cell(h_prev, x, self.Wx, self.Wh, self.b)


def gru_cell(h_prev: Tensor, x: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor) -> Tensor:
    d = h_prev.shape[1]
    if Wx.shape != (x.shape[1], 3 * d) or Wh.shape != (d, 3 * d) or b.shape != (3 * d,):
        raise ShapeError(
            f"gru_cell: h {h_prev.shape}, x {x.shape} vs Wx {Wx.shape}, Wh {Wh.shape}, b {b.shape}"
        )
    if h_prev.shape[0] != x.shape[0]:
        raise ShapeError(f"gru_cell: batch mismatch {h_prev.shape} vs {x.shape}")
    xw = ops.add(ops.matmul(x, Wx), b)
    hu = ops.matmul(h_prev, ops.columns(Wh, 0, 2 * d))
    gates = ops.sigmoid(ops.add(ops.columns(xw, 0, 2 * d), hu))
    z = ops.columns(gates, 0, d)
    r = ops.columns(gates, d, 2 * d)
    cand = ops.tanh(
        ops.add(ops.columns(xw, 2 * d, 3 * d), ops.matmul(ops.mul(r, h_prev), ops.columns(Wh, 2 * d, 3 * d)))
    )
    # (1 - z) * h + z * cand == h + z * (cand - h)
    return ops.add(h_prev, ops.mul(z, ops.sub(cand, h_prev)))


def sinusoidal_position(pos: int, d: int) -> np.ndarray:
    if pos < 0:
        raise ValueError(f"position must be nonnegative, got {pos}")
    return sinusoidal_table([pos], d)[0]


def sinusoidal_table(positions, d: int) -> np.ndarray:
    if d % 2:
        raise ValueError(f"sinusoidal positions need an even width, got {d}")
    positions = np.asarray(positions, dtype=np.int64)
    i = np.arange(d // 2)
    angle = positions[:, None] / np.power(10000.0, 2 * i / d)[None, :]
    out = np.empty((len(positions), d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out
