"""Dense tensors with reverse-mode gradient recording."""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import InvalidInputError

_state = threading.local()


def get_default_dtype():
    return getattr(_state, "dtype", np.float32)


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise InvalidInputError(f"default dtype must be float32 or float64, got {dtype}")
    _state.dtype = dtype


@contextlib.contextmanager
def double_precision():
    """Create new tensors in float64 inside the block."""
    previous = get_default_dtype()
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _as_array(data, dtype=None):
    if isinstance(data, Tensor):
        data = data.data
    if dtype is not None:
        return np.array(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.copy()
    return np.array(data, dtype=get_default_dtype())


class Tensor:
    """A float array that can take part in gradient recording.

    Floating numpy arrays keep their precision; anything else is converted
    to the default dtype (float32 unless inside :func:`double_precision`).
    Forward operations never mutate their inputs.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # -- construction helpers --------------------------------------------------

    @classmethod
    def _result(cls, data, parents, backward):
        needs = any(p.requires_grad for p in parents)
        if needs:
            return cls(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
        return cls(data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- array protocol --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidInputError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __float__(self):
        return self.item()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- gradients -------------------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise InvalidInputError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        if not self.requires_grad:
            return

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators ---------------------------------------------------------------

    def _wrap(self, other):
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        from . import ops
        return ops.add(self, self._wrap(other))

    def __radd__(self, other):
        from . import ops
        return ops.add(self._wrap(other), self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, self._wrap(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(self._wrap(other), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, self._wrap(other))

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self._wrap(other), self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, self._wrap(other))

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(self._wrap(other), self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor) and (dtype is None or x.dtype == dtype):
        return x
    return Tensor(x, dtype=dtype)
