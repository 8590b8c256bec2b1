from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mvnad.core.rng import Rng
from mvnad.core.tensor import Parameter, Tensor, backward, zero_grads


@dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Parameter], **hyper) -> "OptimState":
        st = cls(**hyper)
        st.m = [np.zeros_like(p.data) for p in params]
        st.v = [np.zeros_like(p.data) for p in params]
        return st


def adamw_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: OptimState) -> None:
    """Decoupled-weight-decay Adam with bias correction; updates in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ValueError(f"shape mismatch for {p.name}: {g.shape} vs {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(
    closure: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    With ``max_coords`` set, that many coordinates per parameter are sampled
    (with ``rng``); otherwise every coordinate is checked.
    """
    zero_grads(params)
    backward(closure())
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or Rng(0, 1)
            idx = sorted({rng.randint(flat.size) for _ in range(max_coords)})
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = closure().item()
            flat[i] = orig - h
            fm = closure().item()
            flat[i] = orig
            cd = (fp - fm) / (2.0 * h)
            an = ga.reshape(-1)[i]
            denom = max(abs(an), abs(cd), 1e-8)
            worst = max(worst, abs(an - cd) / denom)
    return worst


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad**2).sum()) for p in params))
    if max_norm > 0 and total > max_norm:
        s = max_norm / total
        for p in params:
            p.grad *= s
    return total
