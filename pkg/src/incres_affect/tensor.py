"""Dense float64 tensors with tape-based reverse-mode gradients.

Every differentiable op records a closure that pushes the output gradient
back into its parents. ``Tensor.backward`` replays those closures in
reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeMismatch

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Rng:
    """Seeded random source backed by numpy's PCG64 bit generator.

    PCG64 output for a given seed is stable across numpy releases and
    platforms, which is what makes initializers and dropout masks
    reproducible.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.generator = np.random.Generator(np.random.PCG64(seed))

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"

    def spawn(self) -> "Rng":
        """Derive an independent child stream (advances this stream)."""
        return Rng(int(self.generator.integers(0, 2**63)))

    def normal(self, size, scale=1.0):
        return self.generator.normal(0.0, scale, size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def truncated_normal(self, size, scale):
        """Normal draws resampled until they fall within two standard deviations."""
        out = self.generator.normal(0.0, 1.0, size)
        bad = np.abs(out) > 2.0
        while bad.any():
            out[bad] = self.generator.normal(0.0, 1.0, int(bad.sum()))
            bad = np.abs(out) > 2.0
        return out * scale


class Tensor:
    """N-d float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a single-element tensor")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        accumulate_grad(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return elementwise("add", self, _as_tensor(other, self.shape))

    def __sub__(self, other):
        return elementwise("sub", self, _as_tensor(other, self.shape))

    def __mul__(self, other):
        return elementwise("mul", self, _as_tensor(other, self.shape))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return total(self)


def _as_tensor(value, shape) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.broadcast_to(np.asarray(value, dtype=np.float64), shape))


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def make_result(data: np.ndarray, parents: Sequence[Tensor],
                backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op output and, if any parent needs gradients, record ``backward``."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def accumulate_grad(t: Tensor, incoming) -> Tensor:
    """``t.grad += incoming``, allocating zeros first if no gradient exists yet."""
    incoming = np.asarray(incoming, dtype=np.float64)
    if incoming.size != t.data.size:
        raise ShapeMismatch(
            f"gradient of length {incoming.size} for tensor with {t.data.size} elements")
    incoming = incoming.reshape(t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += incoming
    return t


def _push(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        accumulate_grad(t, g)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Same-shape add/sub/mul (mul is the Hadamard product)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"elementwise {kind}: {a.shape} vs {b.shape}")
    if kind == "add":
        def backward(g):
            _push(a, g)
            _push(b, g)
        return make_result(a.data + b.data, (a, b), backward)
    if kind == "sub":
        def backward(g):
            _push(a, g)
            _push(b, -g)
        return make_result(a.data - b.data, (a, b), backward)
    if kind == "mul":
        def backward(g):
            _push(a, g * b.data)
            _push(b, g * a.data)
        return make_result(a.data * b.data, (a, b), backward)
    raise ValueError(f"unknown elementwise op {kind!r}")


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(g):
        _push(a, g * factor)
    return make_result(a.data * factor, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            accumulate_grad(a, g @ b.data.T)
        if b.requires_grad:
            accumulate_grad(b, a.data.T @ g)
    return make_result(a.data @ b.data, (a, b), backward)


def total(a: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    def backward(g):
        _push(a, np.broadcast_to(g, a.shape))
    return make_result(np.asarray(a.data.sum()), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        _push(a, g * out * (1.0 - out))
    return make_result(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        _push(a, g * (1.0 - out * out))
    return make_result(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def backward(g):
        _push(a, g.reshape(a.shape))
    return make_result(data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _push(a, g.transpose(inverse))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; gradient scatters back into a zero buffer."""
    data = np.array(a.data[index], copy=True)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            accumulate_grad(a, full)
    return make_result(data, (a,), backward)


def concat(xs: Iterable[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeMismatch("concat needs at least one tensor")
    ndim = xs[0].ndim
    axis = axis % ndim
    for x in xs[1:]:
        if x.ndim != ndim or any(
                x.shape[d] != xs[0].shape[d] for d in range(ndim) if d != axis):
            raise ShapeMismatch(
                f"concat along axis {axis}: {[t.shape for t in xs]}")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        for x, piece in zip(xs, np.split(g, bounds, axis=axis)):
            _push(x, piece)
    return make_result(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Inverse of :func:`concat` for the given extents."""
    axis = axis % x.ndim
    if sum(sizes) != x.shape[axis]:
        raise ShapeMismatch(f"split sizes {list(sizes)} do not sum to {x.shape[axis]}")
    pieces = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + size)
        pieces.append(take(x, tuple(index)))
        start += size
    return pieces
