"""
Adam and LAMB updates over dicts of numpy parameter arrays, plus schedules.
"""
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from errors import ArgumentError, NumericError

BETAS = (0.9, 0.999)
EPS = 1e-8
TRUST_CLIP = (0.0, 10.0)
OPTIMIZERS = ("adam", "lamb")
SCHEDULES = ("cosine", "constant")


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total)); no restarts."""
    if total_steps < 1:
        raise ArgumentError(f"total_steps must be >= 1, got {total_steps}")
    t = min(max(step, 0), total_steps) / total_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def learning_rate(schedule: str, step: int, total_steps: int, base_lr: float) -> float:
    if schedule == "cosine":
        return cosine_lr(step, total_steps, base_lr)
    if schedule == "constant":
        return base_lr
    raise ArgumentError(f"unknown schedule '{schedule}', expected one of {SCHEDULES}")


def _trust_ratio(weight: np.ndarray, update: np.ndarray) -> float:
    w_norm = float(np.linalg.norm(weight))
    u_norm = float(np.linalg.norm(update))
    if w_norm == 0.0 or u_norm == 0.0:
        return 1.0
    return float(np.clip(w_norm / u_norm, *TRUST_CLIP))


def optimizer_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    optimizer: str,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """
    One update. Parameters without a gradient entry are left as they are.
    Returns new arrays; the inputs are not modified.
    """
    if optimizer not in OPTIMIZERS:
        raise ArgumentError(f"unknown optimizer '{optimizer}', expected one of {OPTIMIZERS}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter '{name}'")

    b1, b2 = BETAS
    step = state.step + 1
    m, v = dict(state.m), dict(state.v)
    updated = dict(params)
    for name, g in grads.items():
        w = params[name]
        m[name] = b1 * m.get(name, np.zeros_like(w)) + (1 - b1) * g
        v[name] = b2 * v.get(name, np.zeros_like(w)) + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1**step)
        v_hat = v[name] / (1 - b2**step)
        update = m_hat / (np.sqrt(v_hat) + EPS)
        if weight_decay:
            update = update + weight_decay * w
        if optimizer == "lamb":
            update = _trust_ratio(w, update) * update
        updated[name] = (w - lr * update).astype(w.dtype)
    return updated, OptimizerState(step, m, v)
