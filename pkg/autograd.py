"""
Reverse-mode differentiation over dense numpy arrays.

Every op returns a new `Node` whose value is an immutable ndarray. Nodes that
do not depend on any `requires_grad` leaf carry no provenance, so constant
subgraphs are pruned at construction time.
"""
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from errors import ArgumentError, ContractError, DimensionError, shape_mismatch

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Node:
    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(
        self,
        value,
        parents: tuple["Node", ...] = (),
        op: str = "leaf",
        requires_grad: bool = False,
        backward: BackwardFn | None = None,
    ):
        arr = np.asarray(value)
        if arr.ndim and 0 in arr.shape:
            raise DimensionError(f"{op}: zero-sized dimension in shape {arr.shape}")
        arr.flags.writeable = False
        self.value: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> dict["Node", np.ndarray]:
        return backward(self)

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"


def constant(value, dtype=None) -> Node:
    return Node(np.array(value, dtype=dtype, copy=True))


def parameter(value, dtype=None) -> Node:
    return Node(np.array(value, dtype=dtype, copy=True), requires_grad=True)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value: np.ndarray, parents: tuple[Node, ...], op: str, fn: BackwardFn) -> Node:
    if any(p.requires_grad for p in parents):
        return Node(value, parents=parents, op=op, requires_grad=True, backward=fn)
    return Node(value, op=op)


def _axis(ndim: int, axis: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for {ndim}-d input")
    return axis % ndim


# ---------------------------------------------------------------------------
# Products
# ---------------------------------------------------------------------------

def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise shape_mismatch("matmul", a.shape, b.shape)
    av, bv = a.value, b.value

    def fn(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), "matmul", fn)


def bmm(a, b) -> Node:
    """Batched matmul: [B, m, k] x [B, k, n] -> [B, m, n]."""
    a, b = _as_node(a), _as_node(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise shape_mismatch("bmm", a.shape, b.shape)
    av, bv = a.value, b.value

    def fn(g):
        return g @ bv.transpose(0, 2, 1), av.transpose(0, 2, 1) @ g

    return _make(av @ bv, (a, b), "bmm", fn)


def linear(x, weight, bias=None) -> Node:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


@dataclass
class Linear:
    weight: Node            # in x out
    bias: Node | None = None

    @classmethod
    def from_mapping(cls, params: Mapping[str, Node], prefix: str) -> "Linear":
        return cls(params[f"{prefix}.weight"], params.get(f"{prefix}.bias"))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x) -> Node:
        return linear(x, self.weight, self.bias)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def _bias_shape_ok(a_shape: tuple, b_shape: tuple) -> bool:
    return len(b_shape) <= len(a_shape) and tuple(a_shape[len(a_shape) - len(b_shape):]) == tuple(b_shape)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.reshape(-1, *shape).sum(axis=0)


def add(a, b) -> Node:
    """a + b. `b` may be a bias whose shape matches the trailing axes of `a`."""
    a, b = _as_node(a), _as_node(b)
    if a.shape != b.shape and not _bias_shape_ok(a.shape, b.shape):
        raise shape_mismatch("add", a.shape, b.shape)
    b_shape = b.shape

    def fn(g):
        return g, _reduce_to(g, b_shape)

    return _make(a.value + b.value, (a, b), "add", fn)


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.shape != b.shape and not _bias_shape_ok(a.shape, b.shape):
        raise shape_mismatch("sub", a.shape, b.shape)
    b_shape = b.shape

    def fn(g):
        return g, -_reduce_to(g, b_shape)

    return _make(a.value - b.value, (a, b), "sub", fn)


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.shape != b.shape:
        raise shape_mismatch("mul", a.shape, b.shape)
    av, bv = a.value, b.value

    def fn(g):
        return g * bv, g * av

    return _make(av * bv, (a, b), "mul", fn)


def scale(x, factor: float) -> Node:
    x = _as_node(x)

    def fn(g):
        return (g * factor,)

    return _make(x.value * factor, (x,), "scale", fn)


def relu(x) -> Node:
    x = _as_node(x)
    mask = x.value > 0

    def fn(g):
        return (g * mask,)

    return _make(np.where(mask, x.value, 0).astype(x.dtype, copy=False), (x,), "relu", fn)


def log(x, floor: float | None = None) -> Node:
    """Natural log. With `floor`, the argument is clamped and the clamped region gets zero gradient."""
    x = _as_node(x)
    xv = x.value
    if floor is None:
        arg, live = xv, np.ones(xv.shape, dtype=bool)
    else:
        live = xv > floor
        arg = np.where(live, xv, floor)

    def fn(g):
        return (np.where(live, g / arg, 0.0).astype(xv.dtype, copy=False),)

    return _make(np.log(arg), (x,), "log", fn)


def softmax(x, axis: int = -1) -> Node:
    x = _as_node(x)
    axis = _axis(x.ndim, axis, "softmax")
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), "softmax", fn)


def layer_norm(x, eps: float = 1e-5) -> Node:
    """Normalize over the last axis; no learned affine."""
    x = _as_node(x)
    mu = x.value.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.value.var(axis=-1, keepdims=True) + eps)
    y = (x.value - mu) * inv

    def fn(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True) - y * (g * y).mean(axis=-1, keepdims=True)),)

    return _make(y, (x,), "layer_norm", fn)


# ---------------------------------------------------------------------------
# Structural
# ---------------------------------------------------------------------------

def concat(nodes: Iterable, axis: int = -1) -> Node:
    nodes = tuple(_as_node(n) for n in nodes)
    if not nodes:
        raise ArgumentError("concat: no inputs")
    axis = _axis(nodes[0].ndim, axis, "concat")
    ref = nodes[0].shape
    for n in nodes[1:]:
        if n.ndim != len(ref) or any(n.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise shape_mismatch("concat", ref, n.shape)
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, "concat", fn)


def slice_axis(x, axis: int, start: int, stop: int) -> Node:
    x = _as_node(x)
    axis = _axis(x.ndim, axis, "slice")
    if not 0 <= start < stop <= x.shape[axis]:
        raise DimensionError(f"slice: [{start}:{stop}] out of range for axis of size {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape, dtype = x.shape, x.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _make(x.value[index].copy(), (x,), "slice", fn)


def gather(x, idx: np.ndarray) -> Node:
    """Row gather: out[...] = x[idx[...]]; output shape idx.shape + x.shape[1:]."""
    x = _as_node(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ArgumentError(f"gather: index out of range for {x.shape[0]} rows")
    shape, dtype = x.shape, x.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.value[idx], (x,), "gather", fn)


def reshape(x, shape: tuple[int, ...]) -> Node:
    x = _as_node(x)
    src = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise shape_mismatch("reshape", src, shape) from None

    def fn(g):
        return (g.reshape(src),)

    return _make(out, (x,), "reshape", fn)


def transpose(x, axes: tuple[int, ...]) -> Node:
    x = _as_node(x)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for {x.ndim}-d input")
    inverse = tuple(np.argsort(axes))

    def fn(g):
        return (g.transpose(inverse),)

    return _make(x.value.transpose(axes), (x,), "transpose", fn)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def reduce_max(x, axis: int) -> Node:
    """Max along `axis`; the gradient goes to the first (lowest-index) maximum."""
    x = _as_node(x)
    axis = _axis(x.ndim, axis, "reduce_max")
    arg = np.expand_dims(np.argmax(x.value, axis=axis), axis)
    shape, dtype = x.shape, x.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(np.take_along_axis(x.value, arg, axis=axis).squeeze(axis), (x,), "reduce_max", fn)


def reduce_sum(x, axis: int | None = None) -> Node:
    x = _as_node(x)
    if axis is not None:
        axis = _axis(x.ndim, axis, "reduce_sum")
    shape = x.shape

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(x.value.sum(axis=axis)), (x,), "reduce_sum", fn)


def reduce_mean(x, axis: int | None = None) -> Node:
    x = _as_node(x)
    count = x.value.size if axis is None else x.shape[_axis(x.ndim, axis, "reduce_mean")]
    return scale(reduce_sum(x, axis), 1.0 / count)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _topological_order(root: Node) -> list[Node]:
    """Parents before children, iterative so deep graphs do not hit the recursion limit."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> dict[Node, np.ndarray]:
    """
    Propagate d(loss)/d(node) to every reachable node and add it to `.grad`.
    Calling twice without `zero_grad` accumulates. Returns {leaf: grad} for
    every reachable trainable leaf.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topological_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = pending.get(id(node))
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
    return {n: n.grad for n in order if not n.parents}


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

def numerical_gradient(fn: Callable[[list[np.ndarray]], float], inputs: list[np.ndarray], eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of a scalar function of several arrays."""
    arrays = [np.array(a, dtype=np.float64, copy=True) for a in inputs]
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn(arrays))
            flat[i] = orig - eps
            lo = float(fn(arrays))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def analytic_gradient(fn: Callable[[list[Node]], Node], inputs: list[np.ndarray]) -> list[np.ndarray]:
    leaves = [parameter(a, dtype=np.float64) for a in inputs]
    backward(fn(leaves))
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    """Worst elementwise relative error; differences under `atol` count as exact."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    rel = np.where(diff <= atol, 0.0, diff / denom)
    return float(rel.max()) if rel.size else 0.0


def gradient_check(
    fn: Callable[[list[Node]], Node],
    inputs: list[np.ndarray],
    eps: float = 1e-5,
    atol: float = 1e-8,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients over all inputs."""
    analytic = analytic_gradient(fn, inputs)
    numeric = numerical_gradient(lambda arrays: float(fn([constant(a) for a in arrays]).value), inputs, eps)
    return max(max_relative_error(a, n, atol) for a, n in zip(analytic, numeric))
