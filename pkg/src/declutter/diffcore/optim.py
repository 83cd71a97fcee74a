"""Adam with global gradient-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimError


@dataclass
class OptimState:
    lr: float
    clip_norm: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optim(params: dict[str, np.ndarray], lr: float,
               clip_norm: float | None = None) -> OptimState:
    if lr <= 0:
        raise OptimError(f"learning rate must be positive, got {lr}")
    if clip_norm is not None and clip_norm <= 0:
        raise OptimError(f"clip norm must be positive, got {clip_norm}")
    state = OptimState(lr=lr, clip_norm=clip_norm)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    # accumulate squares in float64 so the clip comparison is stable
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients so the global norm is at most ``clip_norm``."""
    norm = global_grad_norm(grads)
    if norm <= clip_norm:
        return grads, norm
    scale = np.float32(clip_norm / norm)
    return {n: g * scale for n, g in grads.items()}, norm


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimState) -> tuple[dict[str, np.ndarray], OptimState]:
    """One bias-corrected Adam update; clips before updating.

    Raises on non-finite gradients naming the offending parameter.  Returns
    fresh parameter arrays; the moment accumulators in ``state`` advance.
    """
    for name in params:
        if name not in grads:
            raise OptimError(f"missing gradient for '{name}'")
        g = grads[name]
        if g.shape != params[name].shape:
            raise OptimError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise OptimError(f"non-finite gradient for '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])

    if state.clip_norm is not None:
        grads, _ = clip_gradients(grads, state.clip_norm)

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, state
