"""Dense float64 tensors with a dynamic reverse-mode tape.

Every operation creates a new :class:`Tensor` that remembers its parents and a
closure computing the vector-Jacobian product.  Nodes carry a monotonically
increasing id, so :func:`backward` can replay the tape in exact reverse
creation order.
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

# single shared floor used by every clamped log / sqrt / norm in the package
FLOOR = 1e-12

_ids = itertools.count()


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """Input outside the domain of the operation (log/sqrt of negatives, non-finite loss)."""


class ContractError(ValueError):
    """Caller violated a documented precondition."""


class Tensor:
    """A node in the computation graph.

    Leaves created with ``name`` are parameters; :func:`backward` reports
    gradients keyed by that name.
    """

    __slots__ = ("data", "parents", "vjp", "id", "name", "requires_grad", "kind")

    def __init__(self, data, parents: Sequence["Tensor"] = (), vjp: Optional[Callable] = None,
                 name: Optional[str] = None, requires_grad: bool = False, kind: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.id = next(_ids)
        self.name = name
        self.kind = kind
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(kind={self.kind}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64, copy=True))


def _node(data, parents, vjp, kind):
    return Tensor(data, parents=parents, vjp=vjp, kind=kind)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- elementwise binary ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "subtract")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "subtract")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "multiply")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "multiply")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "divide")
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "divide")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


# -- elementwise unary ----------------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


# max(x, 0) and relu are the same map; the hinge losses read better with this name
max_with_zero = relu


def clamp_min(a, floor: float = FLOOR) -> Tensor:
    """max(a, floor) elementwise; gradient is zero where the floor is active."""
    a = as_tensor(a)
    mask = a.data > floor
    return _node(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "clamp")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value; clamp the input first")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value; clamp the input first")
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / np.maximum(out, FLOOR),), "sqrt")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data ** 2, (a,), lambda g: (2.0 * g * a.data,), "square")


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _node(out, (a,), vjp, "softmax")


# -- reductions and reshaping -----------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def var(a, axis: int = 0, keepdims: bool = False) -> Tensor:
    """Population variance (divide by n) along ``axis``."""
    a = as_tensor(a)
    centered = sub(a, mean(a, axis=axis, keepdims=True))
    return mean(square(centered), axis=axis, keepdims=keepdims)


def sq_norm(a) -> Tensor:
    """Squared L2 norm of all entries (a scalar)."""
    return sum(square(a))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def take(a, index) -> Tensor:
    """Basic or fancy indexing; the gradient scatters back with accumulation."""
    a = as_tensor(a)
    if isinstance(index, np.ndarray) and index.dtype == bool:
        index = np.nonzero(index)
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(out, (a,), vjp, "take")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _node(out, tuple(tensors), vjp, "concat")


def row_norms(a) -> Tensor:
    """Euclidean norm of each row, floored at FLOOR, shape (m, 1)."""
    return clamp_min(sqrt(sum(square(a), axis=1, keepdims=True)), FLOOR)


def normalize_rows(a) -> Tensor:
    return div(a, row_norms(a))


def cosine_similarity(a, b) -> Tensor:
    """Pairwise cosine similarity matrix between rows of ``a`` (m×d) and ``b`` (n×d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_similarity: incompatible shapes {a.shape}, {b.shape}")
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


def logsumexp_rows(a) -> Tensor:
    """log Σ_j exp(a_ij) for each row, shape (m, 1), computed with max-subtraction."""
    a = as_tensor(a)
    mx = a.data.max(axis=1, keepdims=True)
    s = np.exp(a.data - mx)
    total = s.sum(axis=1, keepdims=True)
    out = mx + np.log(total)
    return _node(out, (a,), lambda g: (g * s / total,), "logsumexp")


# -- forward dispatch by name --------------------------------------------------------------

OPS: Dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "subtract": sub,
    "scalar_multiply": scale,
    "multiply": mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax_rows": softmax_rows,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
    "sum": sum,
    "mean_axis": mean,
    "variance_axis": var,
    "squared_l2_norm": sq_norm,
    "cosine_similarity": cosine_similarity,
    "max_with_zero": max_with_zero,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply the primitive named ``kind``; see :data:`OPS` for the table."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ContractError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# -- backward ---------------------------------------------------------------------------------

def _topo(root: Tensor) -> list:
    seen = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        stack.extend(p for p in node.parents if p.requires_grad)
    return sorted(seen.values(), key=lambda n: n.id, reverse=True)


def backward(loss: Tensor, params: Optional[Mapping[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. every named leaf reachable from it.

    When ``params`` (name -> array) is given, parameters not on the tape get
    zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    out: Dict[str, np.ndarray] = {}
    for node in _topo(loss):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.name is not None:
            out[node.name] = out.get(node.name, 0.0) + g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    if params is not None:
        for name, value in params.items():
            if name not in out:
                out[name] = np.zeros_like(np.asarray(value, dtype=np.float64))
    return out


class Graph:
    """One forward pass over a parameter store.

    Leaves are created lazily and cached so every use of a parameter within
    the pass refers to the same node.  Discard after calling :meth:`backward`.
    """

    def __init__(self, params: Mapping[str, np.ndarray], trainable: Optional[Iterable[str]] = None):
        self.params = params
        self.trainable = None if trainable is None else set(trainable)
        self._leaves: Dict[str, Tensor] = {}

    def __call__(self, name: str) -> Tensor:
        leaf = self._leaves.get(name)
        if leaf is None:
            grad = self.trainable is None or name in self.trainable
            leaf = Tensor(self.params[name], name=name if grad else None, requires_grad=grad)
            self._leaves[name] = leaf
        return leaf

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """GradientMap over the trainable parameters (zeros for those unused)."""
        names = self.params.keys() if self.trainable is None else self.trainable
        grads = backward(loss)
        return {name: grads[name] if name in grads else np.zeros_like(self.params[name])
                for name in names}


def finite_diff_check(loss_fn: Callable[[Mapping[str, np.ndarray]], float],
                      params: Dict[str, np.ndarray],
                      analytic: Mapping[str, np.ndarray],
                      step: float = 1e-5) -> float:
    """Max relative error between ``analytic`` gradients and central differences.

    ``loss_fn`` receives the (mutated in place) parameter dict and returns a
    float.  Relative error per coordinate is ``|a - c| / (|c| + 1e-8)``.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        grad = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn(params))
            flat[i] = orig - step
            down = float(loss_fn(params))
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise DomainError(f"non-finite loss while perturbing {name}[{i}]")
            central = (up - down) / (2.0 * step)
            worst = max(worst, abs(grad[i] - central) / (abs(central) + 1e-8))
    return worst
