"""Float64 tensors with a minimal reverse-mode tape.

Every op computes its value eagerly with numpy and, when any input requires a
gradient, records a closure mapping the upstream gradient to per-input
gradients. :func:`backward` walks the recorded graph in reverse topological
order and accumulates into the leaves.

Broadcasting is limited to scalar-vs-tensor and equal shapes. Row-vector
biases go through the explicit :func:`add_row` op.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(FloatingPointError):
    """An operation produced (or was fed) non-finite values."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("add", elementwise("scale", self, -1.0), other)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", self, other)

    def __neg__(self):
        return elementwise("scale", self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf. ``grad`` always has the value's shape."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)


def _not_scalar(t: Tensor) -> float:
    raise ShapeError(f"tensor of shape {t.shape} is not scalar")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_finite(data: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{what} produced non-finite values")
    return data


def _is_scalar(x) -> bool:
    return not isinstance(x, Tensor) and np.ndim(x) == 0


# ---------------------------------------------------------------------------
# elementwise


def elementwise(op: str, a, b=None) -> Tensor:
    """Elementwise ``add``, ``sub``, ``mul``, ``scale`` (b scalar), ``exp``, ``log``.

    ``b`` may be a Python scalar or a tensor of identical shape; a size-1
    tensor also acts as a scalar.
    """
    a = as_tensor(a)
    if op == "exp":
        with np.errstate(over="ignore"):
            y = _check_finite(np.exp(a.data), "exp")
        return _node(y, (a,), lambda g: (g * y,))
    if op == "log":
        if np.any(a.data <= 0):
            raise NumericError("log requires strictly positive input (apply the eps shift first)")
        x = a.data
        return _node(np.log(x), (a,), lambda g: (g / x,))
    if op == "scale":
        if not _is_scalar(b):
            raise ShapeError("scale expects a scalar factor")
        s = float(b)
        return _node(a.data * s, (a,), lambda g: (g * s,))
    if op not in ("add", "sub", "mul"):
        raise ValueError(f"unknown elementwise op {op!r}")

    if _is_scalar(b):
        s = float(b)
        if op == "add":
            return _node(a.data + s, (a,), lambda g: (g,))
        if op == "sub":
            return _node(a.data - s, (a,), lambda g: (g,))
        return _node(a.data * s, (a,), lambda g: (g * s,))

    b = as_tensor(b)
    if a.shape == b.shape:
        if op == "add":
            return _node(a.data + b.data, (a, b), lambda g: (g, g))
        if op == "sub":
            return _node(a.data - b.data, (a, b), lambda g: (g, -g))
        ad, bd = a.data, b.data
        return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    # tensor-scalar with a size-1 tensor on either side
    if b.data.size == 1 or a.data.size == 1:
        big, small, swapped = (a, b, False) if b.data.size == 1 else (b, a, True)
        sv = small.data.reshape(())
        if op == "add":
            return _node(big.data + sv, (big, small), lambda g: (g, np.full(small.shape, g.sum())))
        if op == "sub":
            if swapped:
                return _node(sv - big.data, (big, small), lambda g: (-g, np.full(small.shape, g.sum())))
            return _node(big.data - sv, (big, small), lambda g: (g, np.full(small.shape, -g.sum())))
        bd = big.data
        return _node(
            bd * sv, (big, small), lambda g: (g * sv, np.full(small.shape, (g * bd).sum()))
        )
    raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise("mul", a, b)


def scale(a, s: float) -> Tensor:
    return elementwise("scale", a, s)


def exp(a) -> Tensor:
    return elementwise("exp", a)


def log(a) -> Tensor:
    return elementwise("log", a)


def add_row(x: Tensor, bias: Tensor) -> Tensor:
    """``x[i, :] + bias`` for every row i (bias of shape (d,))."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.ndim != 2 or bias.shape != (x.shape[1],):
        raise ShapeError(f"add_row: {x.shape} and {bias.shape}")
    return _node(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# linear algebra and reshaping


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _node(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def cols(a, start: int, stop: int) -> Tensor:
    """Column slice ``a[:, start:stop]``."""
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _node(a.data[:, start:stop].copy(), (a,), back)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    edges = np.cumsum([0] + [p.shape[1] for p in parts])
    return _node(
        np.concatenate([p.data for p in parts], axis=1),
        parts,
        lambda g: tuple(g[:, edges[i] : edges[i + 1]] for i in range(len(parts))),
    )


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    edges = np.cumsum([0] + [p.shape[0] for p in parts])
    return _node(
        np.concatenate([p.data for p in parts], axis=0),
        parts,
        lambda g: tuple(g[edges[i] : edges[i + 1]] for i in range(len(parts))),
    )


def tsum(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def tmean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.data.size
    return _node(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def mean_rows(a) -> Tensor:
    """Column means of a matrix: shape (n, d) -> (d,)."""
    a = as_tensor(a)
    n = a.shape[0]
    return _node(a.data.mean(axis=0), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def mean_of(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise arithmetic mean of equally shaped tensors."""
    acc = tensors[0]
    for t in tensors[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(tensors))


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("softmax_rows expects a matrix")
    _check_finite(x.data, "softmax_rows input")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return _node(y, (x,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    y = xhat * gd + beta.data

    def back(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _node(y, (x, gamma, beta), back)


_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(x) -> Tensor:
    """tanh-approximation GELU."""
    x = as_tensor(x)
    xd = x.data
    t = np.tanh(_GELU_K * (xd + _GELU_C * xd**3))
    y = 0.5 * xd * (1.0 + t)

    def back(g):
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _node(y, (x,), back)


def cosine_rows(a, b) -> Tensor:
    """Row-wise cosine similarity of two (n, d) matrices -> (n,)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"cosine_rows: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise NumericError("cosine similarity of a zero-norm vector")
    dot = (a.data * b.data).sum(axis=1)
    c = dot / (na * nb)
    ad, bd = a.data, b.data

    def back(g):
        gc = g[:, None]
        da = gc * (bd / (na * nb)[:, None] - c[:, None] * ad / (na**2)[:, None])
        db = gc * (ad / (na * nb)[:, None] - c[:, None] * bd / (nb**2)[:, None])
        return da, db

    return _node(c, (a, b), back)


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity of two vectors, as a scalar tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_sim: {a.shape} vs {b.shape}")
    d = a.shape[0]
    return reshape(cosine_rows(reshape(a, (1, d)), reshape(b, (1, d))), ())


# ---------------------------------------------------------------------------
# backward


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        key = id(node)
        if i == 0:
            s = state.get(key)
            if s == 2:
                continue
            if s == 1:
                raise RuntimeError("cycle in computation graph")
            state[key] = 1
        if i < len(node._parents):
            stack.append((node, i + 1))
            child = node._parents[i]
            cs = state.get(id(child))
            if cs == 1:
                raise RuntimeError("cycle in computation graph")
            if cs is None:
                stack.append((child, 0))
        else:
            state[key] = 2
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf requiring grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)
