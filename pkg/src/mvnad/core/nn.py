"""Attention, feed-forward and parameter containers built on the tensor tape."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from mvnad.core.rng import Rng
from mvnad.core.tensor import (
    Parameter,
    Tensor,
    add_row,
    as_tensor,
    cols,
    concat_cols,
    gelu,
    layer_norm,
    matmul,
    scale,
    softmax_rows,
    transpose,
)


class ParameterSet:
    """Ordered name -> Parameter mapping with prefix scoping."""

    def __init__(self, params: dict[str, Parameter] | None = None):
        self._params: dict[str, Parameter] = dict(params or {})

    def __getitem__(self, key: str) -> Parameter:
        return self._params[key]

    def __setitem__(self, key: str, value: Parameter) -> None:
        value.name = key
        self._params[key] = value

    def __contains__(self, key: str) -> bool:
        return key in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def scoped(self, prefix: str) -> "ParameterSet":
        """View of the parameters under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return ParameterSet({k[cut:]: v for k, v in self._params.items() if k.startswith(prefix + ".")})


def init_matrix(rng: Rng, rows: int, cols_: int, std: float | None = None) -> np.ndarray:
    std = 1.0 / math.sqrt(rows) if std is None else std
    return rng.gaussian_array((rows, cols_)) * std


def add_attention_params(ps: ParameterSet, prefix: str, d: int, rng: Rng, identity: bool = False) -> None:
    for name in ("W_Q", "W_K", "W_V", "W_O"):
        value = np.eye(d) if identity else init_matrix(rng, d, d)
        ps[f"{prefix}.{name}"] = Parameter(value)


def add_ffn_params(ps: ParameterSet, prefix: str, d: int, mult: int, rng: Rng) -> None:
    hidden = d * mult
    ps[f"{prefix}.ln_g"] = Parameter(np.ones(d))
    ps[f"{prefix}.ln_b"] = Parameter(np.zeros(d))
    ps[f"{prefix}.W1"] = Parameter(init_matrix(rng, d, hidden))
    ps[f"{prefix}.b1"] = Parameter(np.zeros(hidden))
    ps[f"{prefix}.W2"] = Parameter(init_matrix(rng, hidden, d))
    ps[f"{prefix}.b2"] = Parameter(np.zeros(d))


@dataclass
class AttentionTrace:
    """Head-averaged attention weights (nq x nk) from one call."""

    weights: np.ndarray | None = None
    tensor: Tensor | None = None  # differentiable copy of ``weights``
    per_head: list[Tensor] = field(default_factory=list)


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: ParameterSet,
    heads: int,
    trace: AttentionTrace | None = None,
    key_weights: ParameterSet | None = None,
) -> Tensor:
    """Scaled dot-product attention over ``heads`` heads with output projection.

    ``weights`` holds W_Q, W_K, W_V, W_O (each d x d). When ``key_weights`` is
    given its W_K/W_V replace those of ``weights`` (per-branch projections with
    a shared query projection).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[1]
    if d % heads:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    if k.shape[1] != d or v.shape[1] != d or k.shape[0] != v.shape[0]:
        raise ValueError(f"attention shapes q {q.shape}, k {k.shape}, v {v.shape}")
    kv = key_weights if key_weights is not None else weights
    qp = matmul(q, weights["W_Q"])
    kp = matmul(k, kv["W_K"])
    vp = matmul(v, kv["W_V"])
    dh = d // heads
    inv = 1.0 / math.sqrt(dh)
    outs = []
    probs = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh = cols(qp, sl.start, sl.stop) if heads > 1 else qp
        kh = cols(kp, sl.start, sl.stop) if heads > 1 else kp
        vh = cols(vp, sl.start, sl.stop) if heads > 1 else vp
        a = softmax_rows(scale(matmul(qh, transpose(kh)), inv))
        probs.append(a)
        outs.append(matmul(a, vh))
    merged = concat_cols(outs) if heads > 1 else outs[0]
    if trace is not None:
        avg = probs[0]
        for p in probs[1:]:
            avg = avg + p
        trace.tensor = scale(avg, 1.0 / heads) if heads > 1 else avg
        trace.weights = trace.tensor.data
        trace.per_head = probs
    return matmul(merged, weights["W_O"])


def feed_forward(x: Tensor, ps: ParameterSet, eps: float = 1e-6) -> Tensor:
    """FFN(LayerNorm(x)): Linear -> GELU -> Linear."""
    h = layer_norm(x, ps["ln_g"], ps["ln_b"], eps)
    h = gelu(add_row(matmul(h, ps["W1"]), ps["b1"]))
    return add_row(matmul(h, ps["W2"]), ps["b2"])


def mlp(x: Tensor, ps: ParameterSet) -> Tensor:
    """The FFN without its leading LayerNorm."""
    h = gelu(add_row(matmul(x, ps["W1"]), ps["b1"]))
    return add_row(matmul(h, ps["W2"]), ps["b2"])
