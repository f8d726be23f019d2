"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record themselves when a :class:`Tape` is active and at
least one input requires a gradient. Outside a tape everything runs as
plain numpy, which is what generation and evaluation use.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class EmptySupportError(ValueError):
    """Raised when a softmax row has no unmasked entries."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True).reshape(self.value.shape)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the functional forms live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


class Parameter(Tensor):
    """A named trainable tensor with Adam moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, name: str, value):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Records differentiable operations in creation (topological) order."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.visits = 0

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, root: Tensor, seed: np.ndarray | None = None) -> None:
        if root.value.size != 1 and seed is None:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        root.accumulate(np.ones_like(root.value) if seed is None else seed)
        self.visits = 0
        for node in reversed(self.nodes):
            self.visits += 1
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)
        # intermediate grads are not needed after the sweep
        for node in self.nodes:
            node.grad = None
            node.backward_fn = None
            node.parents = ()


class no_record:
    """Context manager that suspends recording on every active tape."""

    def __enter__(self):
        self._saved = Tape._stack[:]
        Tape._stack.clear()

    def __exit__(self, *exc):
        Tape._stack[:] = self._saved


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(
    value: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], None],
) -> Tensor:
    """Wrap an op's output and record it if any parent needs a gradient."""
    out = Tensor(value)
    tape = Tape.active()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        tape.nodes.append(out)
    return out


def parameters_grad_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))
