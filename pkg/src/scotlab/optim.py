"""AdamW, learning-rate schedules and global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

SCHEDULE_KINDS = ("cosine-with-linear-warmup", "cosine", "constant")


@dataclass
class LrSchedule:
    kind: str = "cosine-with-linear-warmup"
    max_lr: float = 1e-3
    warmup_steps: int = 0
    total_steps: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.max_lr < 0:
            raise ValueError("max_lr must be non-negative")
        if self.warmup_steps < 0 or self.total_steps <= self.warmup_steps:
            raise ValueError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps} and {self.total_steps}"
            )


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at optimizer step ``step`` (0-based, inclusive of total)."""
    s = schedule
    if step < 0 or step > s.total_steps:
        raise ValueError(f"step {step} outside [0, {s.total_steps}]")
    if s.kind == "constant":
        return s.max_lr
    warm = s.warmup_steps if s.kind == "cosine-with-linear-warmup" else 0
    if step < warm:
        return s.max_lr * step / warm
    progress = (step - warm) / (s.total_steps - warm)
    return max(0.0, s.max_lr * 0.5 * (1.0 + math.cos(math.pi * progress)))


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float = 5.0) -> tuple[list[np.ndarray], float]:
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``.

    Returns the (possibly scaled) gradients and the norm before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * np.asarray(scale, dtype=g.dtype) for g in grads], norm
    return list(grads), norm


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr: float = 1e-3
    weight_decay: float = 0.0
    name: str = ""


@dataclass
class AdamWState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamWState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One in-place AdamW update of the arrays in ``params``.

    ``lr`` and ``weight_decay`` may be scalars or per-parameter sequences.
    Weight decay is decoupled: theta <- theta - lr*wd*theta before the Adam step.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValueError("params, grads and optimizer state have different lengths")
    n = len(params)
    lrs = [lr] * n if np.isscalar(lr) else list(lr)
    wds = [weight_decay] * n if np.isscalar(weight_decay) else list(weight_decay)
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v, lr_i, wd_i in zip(params, grads, state.m, state.v, lrs, wds):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch in optimizer: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr_i == 0.0:
            continue
        if wd_i:
            p *= 1.0 - lr_i * wd_i
        p -= (lr_i / c1) * m / (np.sqrt(v / c2) + eps)


class AdamW:
    """AdamW over parameter groups, each with its own base lr and weight decay.

    ``step(grads, lr_scale)`` multiplies every group's base lr by ``lr_scale``
    (a schedule value normalized to 1 at the peak).
    """

    def __init__(self, groups: Sequence[ParamGroup], betas=(0.9, 0.999), eps: float = 1e-8):
        self.groups = list(groups)
        self.betas = betas
        self.eps = eps
        self.params = [p for g in self.groups for p in g.params]
        self.state = AdamWState()

    def step(self, grads: Sequence[np.ndarray], lr_scale: float = 1.0) -> None:
        lrs, wds = [], []
        for g in self.groups:
            lrs += [g.lr * lr_scale] * len(g.params)
            wds += [g.weight_decay] * len(g.params)
        adamw_step([p.data for p in self.params], grads, self.state, lrs, self.betas, self.eps, wds)

    def state_dict(self) -> dict:
        return {"t": self.state.t, "m": [a.copy() for a in self.state.m], "v": [a.copy() for a in self.state.v]}

    def load_state_dict(self, sd: dict) -> None:
        self.state = AdamWState(m=[np.array(a) for a in sd["m"]], v=[np.array(a) for a in sd["v"]], t=int(sd["t"]))
