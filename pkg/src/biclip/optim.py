"""AdamW with decoupled weight decay, global-norm clipping, cosine warm restarts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from biclip.errors import NonFiniteError


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr: float | None = None) -> None:
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array).

    Decay is applied to the weights directly, not folded into the moments.
    A parameter without a gradient is still decayed.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {name!r}")
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        data = p.data
        g = grads.get(name)
        if state.weight_decay:
            data = data - data.dtype.type(lr * state.weight_decay) * data
        if g is not None:
            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = np.zeros_like(data)
                v = np.zeros_like(data)
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
            state.m[name], state.v[name] = m.astype(data.dtype), v.astype(data.dtype)
            update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            data = data - (lr * update).astype(data.dtype)
        p.data = data.astype(p.dtype, copy=False)


class AdamW:
    """Thin object wrapper binding named parameters to an OptimizerState."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.params = dict(named_params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        grads = {name: p.grad for name, p in self.params.items()}
        adamw_step(self.params, grads, self.state, lr)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.grad.dtype)
    return total


def cosine_annealing(t: float, period: float, lr_max: float, lr_min: float) -> float:
    """Single-cycle cosine: lr_max at t=0, lr_min at t=period."""
    if t == 0:
        return lr_max  # exact, not lr_min + (lr_max - lr_min)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / period))


def cycle_position(step: float, t_0: float, t_mult: float) -> tuple[float, float]:
    """(time since the last restart, length of the current cycle)."""
    if t_0 <= 0 or t_mult < 1:
        raise ValueError("need t_0 > 0 and t_mult >= 1")
    t, length = float(step), float(t_0)
    if t_mult == 1:
        return math.fmod(t, length), length
    while t >= length:
        t -= length
        length *= t_mult
    return t, length


def cosine_warm_restart_lr(step: float, t_0: float, t_mult: float, lr_max: float, lr_min: float) -> float:
    """Cosine annealing with warm restarts; cycle i lasts t_0 * t_mult**i.

    At a restart boundary the new cycle wins, so ``step == t_0`` gives lr_max.
    """
    t, length = cycle_position(step, t_0, t_mult)
    return cosine_annealing(t, length, lr_max, lr_min)
