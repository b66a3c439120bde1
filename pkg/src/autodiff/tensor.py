"""
Tensor Module

Dense N-dimensional tensors backed by numpy arrays, with reverse-mode automatic
differentiation recorded on a per-thread Tape.

Every primitive records one node on the active tape when at least one of its
inputs requires a gradient. A node keeps its inputs and a vector-Jacobian
product closure holding whatever activations the backward rule needs.
"""
import contextlib
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

_DTYPES = {32: np.float32, 64: np.float64}
_default_dtype = np.float32
_local = threading.local()


class DimensionError(ValueError):
    """Raised when tensor shapes do not fit an operation."""


class ContractError(RuntimeError):
    """Raised when an autodiff precondition is violated."""


def default_dtype() -> type:
    return _default_dtype


def set_precision(bits: int) -> None:
    """
    Set the floating point width used for newly created tensors.

    Args:
        bits: 32 (default, fast) or 64 (gradient verification)
    """
    global _default_dtype
    if bits not in _DTYPES:
        raise ValueError(f"Unsupported precision {bits}, expected 32 or 64")
    _default_dtype = _DTYPES[bits]
    logger.debug(f"Tensor precision set to {bits} bit")


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    global _default_dtype
    previous = _default_dtype
    set_precision(bits)
    try:
        yield
    finally:
        _default_dtype = previous


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (inference, evaluation)."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


@dataclass
class Node:
    op: str
    inputs: Tuple["Tensor", ...]
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """
    Ordered record of primitive applications.

    Node indices are assigned in creation order, so every input of node i was
    produced by a node with a smaller index (or is a leaf). Entering a Tape as a
    context manager makes it the active tape of the current thread; outside any
    block a per-thread default tape is used.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.generation = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _stack().pop()
        self.reset()

    def record(self, op: str, inputs: Sequence["Tensor"], output: "Tensor", vjp) -> None:
        output._tape = self
        output._gen = self.generation
        output._node = len(self.nodes)
        self.nodes.append(Node(op, tuple(inputs), vjp))

    def owns(self, tensor: "Tensor") -> bool:
        return tensor._tape is self and tensor._gen == self.generation and tensor._node is not None

    def reset(self) -> None:
        self.nodes = []
        self.generation += 1

    def backward(self, loss: "Tensor") -> None:
        grads = {loss._node: np.ones_like(loss.data)}
        for index in range(loss._node, -1, -1):
            grad = grads.pop(index, None)
            if grad is None:
                continue
            node = self.nodes[index]
            for tensor, input_grad in zip(node.inputs, node.vjp(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if self.owns(tensor):
                    previous = grads.get(tensor._node)
                    grads[tensor._node] = input_grad if previous is None else previous + input_grad
                else:
                    input_grad = np.asarray(input_grad, dtype=tensor.data.dtype).reshape(tensor.shape)
                    tensor.grad = input_grad.copy() if tensor.grad is None else tensor.grad + input_grad
        self.reset()


def _stack() -> List[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = [Tape()]
    return _local.tapes


def current_tape() -> Tape:
    return _stack()[-1]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def make_result(data: np.ndarray, inputs: Sequence["Tensor"], op: str, vjp) -> "Tensor":
    """Wrap a primitive's output and record it on the active tape when needed."""
    out = Tensor._wrap(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(op, inputs, out, vjp)
    return out


def as_tensor(value, dtype=None) -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


class Tensor:
    """
    Dense tensor with an optional gradient slot.

    Attributes:
        data: contiguous numpy buffer, product(shape) == data.size
        requires_grad: whether backward() should deliver a gradient here
        grad: same-shape gradient buffer after backward(), else None
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.ascontiguousarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None
        self._gen = -1
        self._node: Optional[int] = None

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        array = np.asarray(array)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(_default_dtype)
        return cls(array, dtype=array.dtype)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def _other(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)

    # Arithmetic

    def __add__(self, other) -> "Tensor":
        other = self._other(other)
        a_shape, b_shape = self.shape, other.shape
        return make_result(self.data + other.data, (self, other), "add",
                           lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = self._other(other)
        a_shape, b_shape = self.shape, other.shape
        return make_result(self.data - other.data, (self, other), "sub",
                           lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)))

    def __rsub__(self, other) -> "Tensor":
        return self._other(other) - self

    def __mul__(self, other) -> "Tensor":
        other = self._other(other)
        a, b = self.data, other.data
        return make_result(a * b, (self, other), "mul",
                           lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._other(other)
        a, b = self.data, other.data
        return make_result(a / b, (self, other), "div",
                           lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other) -> "Tensor":
        return self._other(other) / self

    def __neg__(self) -> "Tensor":
        return make_result(-self.data, (self,), "neg", lambda g: (-g,))

    def __matmul__(self, other) -> "Tensor":
        other = self._other(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        a, b = self.data, other.data
        return make_result(a @ b, (self, other), "matmul", lambda g: (g @ b.T, a.T @ g))

    # Reductions and shape

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return make_result(np.sum(self.data, axis=axis, keepdims=keepdims), (self,), "sum", vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int) -> "Tensor":
        """Maximum along one axis; the gradient flows to the first maximal entry."""
        index = np.argmax(self.data, axis=axis)
        shape = self.shape

        def vjp(g):
            grad = np.zeros(shape, dtype=g.dtype)
            np.put_along_axis(grad, np.expand_dims(index, axis), np.expand_dims(g, axis), axis=axis)
            return (grad,)

        return make_result(np.max(self.data, axis=axis), (self,), "max", vjp)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return make_result(self.data.reshape(shape), (self,), "reshape", lambda g: (g.reshape(original),))

    def flatten(self) -> "Tensor":
        return self.reshape(self.shape[0], -1)

    # Elementwise

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return make_result(out, (self,), "exp", lambda g: (g * out,))

    def log(self) -> "Tensor":
        x = self.data
        return make_result(np.log(x), (self,), "log", lambda g: (g / x,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return make_result(out, (self,), "tanh", lambda g: (g * (1.0 - out * out),))

    def square(self) -> "Tensor":
        x = self.data
        return make_result(x * x, (self,), "square", lambda g: (2.0 * g * x,))

    def maximum(self, floor: float) -> "Tensor":
        """Elementwise max(x, floor) against a constant floor."""
        x = self.data
        mask = x > floor
        return make_result(np.where(mask, x, floor).astype(x.dtype), (self,), "maximum", lambda g: (g * mask,))

    def relu(self) -> "Tensor":
        x = self.data
        mask = x > 0
        return make_result(np.where(mask, x, 0).astype(x.dtype), (self,), "relu", lambda g: (g * mask,))

    def sigmoid(self) -> "Tensor":
        """Logistic function, clamped so that every output lies strictly inside (0, 1) at the working precision."""
        x = self.data
        out = np.empty_like(x)
        positive = x >= 0
        out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
        e = np.exp(x[~positive])
        out[~positive] = e / (1.0 + e)
        info = np.finfo(out.dtype)
        np.clip(out, info.tiny, 1.0 - info.epsneg, out=out)
        return make_result(out, (self,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def backward(loss: Tensor) -> None:
    """
    Fill .grad on every requires_grad leaf that contributed to loss.

    Gradients accumulate additively into leaves shared by several paths and into
    leaves that already hold a gradient. The tape is reset afterwards.

    Args:
        loss: scalar tensor produced on a live tape
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or not tape.owns(loss):
        if loss.requires_grad and loss._node is None:
            loss.grad = np.ones_like(loss.data)
            return
        raise ContractError("backward() called on a tensor that is not on a live tape")
    tape.backward(loss)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_default_dtype), requires_grad=requires_grad)


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", vjp)
