"""Immutable tensors and tape-based reverse-mode differentiation.

A ``Tensor`` wraps a read-only numpy array. Operations are dispatched by name
through the primitive registry; while a ``GradientTape`` is active, every
primitive applied to a watched tensor (or to anything computed from one) is
recorded, and ``GradientTape.gradient`` replays the records backwards.

Tapes live on a thread-local stack, so a tape is never shared across threads.
"""
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import ShapeMismatchError, UnsupportedPrimitiveError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


@dataclass(frozen=True)
class Primitive:
    """Forward function plus its vector-Jacobian product.

    ``vjp(g, out, *inputs, **attrs)`` returns one gradient (or None) per input.
    ``kink`` optionally returns the branch pattern of a piecewise op, used by the
    finite-difference checker to skip points where a kink is crossed.
    """
    name: str
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., Tuple[Optional[np.ndarray], ...]]
    kink: Optional[Callable[..., np.ndarray]] = None


_REGISTRY: Dict[str, Primitive] = {}


def register_primitive(name: str, forward: Callable, vjp: Callable,
                       kink: Optional[Callable] = None) -> Primitive:
    primitive = Primitive(name, forward, vjp, kink)
    _REGISTRY[name] = primitive
    return primitive


def registered_primitives() -> List[str]:
    return sorted(_REGISTRY)


def get_primitive(name: str) -> Primitive:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnsupportedPrimitiveError(f"no registered primitive named '{name}'") from None


class Tensor:
    """Dense n-dimensional array; immutable once created."""

    __slots__ = ("_data",)
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, dtype=None):
        if isinstance(data, Tensor):
            data = data._data
        arr = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # no copy: a read-only view, so the caller's array keeps its own flags
        obj = cls.__new__(cls)
        arr = np.asarray(arr).view()
        arr.flags.writeable = False
        obj._data = arr
        return obj

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeMismatchError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def _lift(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor._wrap(np.asarray(other, dtype=self.dtype))

    def __add__(self, other): return apply("add", self, self._lift(other))
    def __radd__(self, other): return apply("add", self._lift(other), self)
    def __sub__(self, other): return apply("subtract", self, self._lift(other))
    def __rsub__(self, other): return apply("subtract", self._lift(other), self)
    def __mul__(self, other): return apply("multiply", self, self._lift(other))
    def __rmul__(self, other): return apply("multiply", self._lift(other), self)
    def __truediv__(self, other): return apply("divide", self, self._lift(other))
    def __rtruediv__(self, other): return apply("divide", self._lift(other), self)
    def __matmul__(self, other): return apply("matmul", self, self._lift(other))
    def __rmatmul__(self, other): return apply("matmul", self._lift(other), self)
    def __neg__(self): return apply("negative", self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=tuple(shape))

    def relu(self) -> "Tensor":
        return apply("relu", self)

    def exp(self) -> "Tensor":
        return apply("exp", self)

    def log(self) -> "Tensor":
        return apply("log", self)


def as_tensor(value: ArrayLike, dtype=None) -> Tensor:
    if isinstance(value, Tensor) and (dtype is None or value.dtype == dtype):
        return value
    return Tensor(value, dtype=dtype)


@dataclass
class _Node:
    primitive: Primitive
    inputs: Tuple[Tensor, ...]
    output: Tensor
    attrs: Dict[str, Any] = field(default_factory=dict)


class _TapeState(threading.local):
    def __init__(self):
        self.tapes: List["GradientTape"] = []
        self.kink_observers: List[List[np.ndarray]] = []


_state = _TapeState()


class GradientTape:
    """Records primitives applied to watched tensors for one backward pass."""

    def __init__(self):
        self._nodes: List[_Node] = []
        self._tracked: set = set()
        self._watched: List[Tensor] = []

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._watched.append(t)
            self._tracked.add(id(t))

    def __enter__(self) -> "GradientTape":
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.remove(self)

    def _record(self, node: _Node) -> None:
        if any(id(t) in self._tracked for t in node.inputs):
            self._nodes.append(node)
            self._tracked.add(id(node.output))

    def gradient(self, target: Tensor, sources: Sequence[Tensor],
                 output_gradient: Optional[np.ndarray] = None) -> List[Tensor]:
        if output_gradient is None:
            if target.size != 1:
                raise ShapeMismatchError(
                    f"gradient of a non-scalar target {target.shape} needs output_gradient")
            output_gradient = np.ones_like(target.data)
        grads: Dict[int, np.ndarray] = {id(target): np.asarray(output_gradient, dtype=target.dtype)}

        for node in reversed(self._nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            in_grads = node.primitive.vjp(
                g, node.output.data, *[t.data for t in node.inputs], **node.attrs)
            for tensor, gi in zip(node.inputs, in_grads):
                if gi is None or id(tensor) not in self._tracked:
                    continue
                gi = _unbroadcast(np.asarray(gi), tensor.shape).astype(tensor.dtype, copy=False)
                key = id(tensor)
                grads[key] = grads[key] + gi if key in grads else gi

        return [Tensor._wrap(np.array(grads[id(s)], copy=True)) if id(s) in grads
                else Tensor._wrap(np.zeros_like(s.data)) for s in sources]


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def apply(name: str, *inputs: Tensor, **attrs) -> Tensor:
    """Run a registered primitive and record it on every active tape."""
    primitive = get_primitive(name)
    arrays = [t.data for t in inputs]
    out = Tensor._wrap(primitive.forward(*arrays, **attrs))
    if primitive.kink is not None and _state.kink_observers:
        pattern = np.asarray(primitive.kink(*arrays, **attrs))
        for observer in _state.kink_observers:
            observer.append(pattern)
    for tape in _state.tapes:
        tape._record(_Node(primitive, tuple(inputs), out, attrs))
    return out


@contextmanager
def observe_kinks() -> Iterator[List[np.ndarray]]:
    """Collect the branch patterns of every piecewise primitive applied inside."""
    patterns: List[np.ndarray] = []
    _state.kink_observers.append(patterns)
    try:
        yield patterns
    finally:
        _state.kink_observers.remove(patterns)


def value_and_grad(f: Callable[..., Tensor], params: Sequence[ArrayLike]) -> Tuple[Tensor, List[Tensor]]:
    tensors = [as_tensor(p) for p in params]
    with GradientTape() as tape:
        tape.watch(*tensors)
        out = f(*tensors)
    return out, tape.gradient(out, tensors)


def grad(f: Callable[..., Tensor], params: Sequence[ArrayLike]) -> List[Tensor]:
    """Gradient of a scalar-valued computation with respect to each parameter."""
    return value_and_grad(f, params)[1]
