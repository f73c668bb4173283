"""ADAM with bias correction, keyed by parameter name for checkpointing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)  # name -> first moment
    v: dict = field(default_factory=dict)  # name -> second moment


def adam_step(state: AdamState, params: dict, grads: dict) -> AdamState:
    """One update, in place on each param's data.

    params maps name -> Tensor, grads maps name -> ndarray. Moments are
    created lazily on first sight of a parameter so a fresh state and a
    checkpoint-restored one follow the same code path.
    """
    state.step += 1
    b1c = 1.0 - state.beta1**state.step
    b2c = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= (state.lr / b1c) * m / (np.sqrt(v / b2c) + state.eps)
    return state


def init_params(shapes: dict, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Fan-in scaled normal init; bias entries (1-D) start at zero."""
    params = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            params[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)
        else:
            fan_in = int(np.prod(shape[1:]))
            w = rng.standard_normal(shape) / np.sqrt(fan_in)
            params[name] = Tensor(w.astype(dtype), requires_grad=True, name=name)
    return params
