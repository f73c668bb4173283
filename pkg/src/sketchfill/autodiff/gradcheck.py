"""Finite-difference validation of first and second derivatives.

All checks run in float64. Relative error uses max(|analytic|, |numeric|, 1)
as the denominator, so tiny gradients are compared absolutely instead of
blowing up the ratio.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor, grad
from .ops import tsum


def _as_tensors(arrays):
    ts = []
    for x in arrays:
        x = np.asarray(x, dtype=np.float64)
        ts.append(Tensor(x.copy(), requires_grad=True))
    return ts


def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(fn, arrays, eps=1e-5):
    """Central differences of scalar fn(*ndarrays) w.r.t. every input."""
    arrays = [np.asarray(x, dtype=np.float64).copy() for x in arrays]
    grads = []
    for k, x in enumerate(arrays):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = float(fn(*arrays))
            flat[i] = keep - eps
            lo = float(fn(*arrays))
            flat[i] = keep
            gf[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def check_grad(fn, arrays, eps=1e-5) -> float:
    """Max relative error between autodiff and central differences.

    fn takes Tensors and returns a scalar Tensor; the same fn is evaluated
    on perturbed copies for the numeric side.
    """
    ts = _as_tensors(arrays)
    analytic = grad(fn(*ts), ts)

    def scalar_fn(*arrs):
        return fn(*(Tensor(a.copy()) for a in arrs)).item()

    numeric = numeric_grad(scalar_fn, arrays, eps=eps)
    return max(_rel_err(a.data, n) for a, n in zip(analytic, numeric))


def check_grad_second(fn, arrays, eps=1e-5, seed=0) -> float:
    """Second-order check: differentiate the backward pass itself.

    With a fixed random direction v, s(x) = sum_k <grad_k fn(x), v_k> is a
    scalar whose gradient the engine computes by a second backward through
    the create-graph first backward. That is compared against central
    differences of s.
    """
    rng = np.random.default_rng(seed)
    vs = [rng.standard_normal(np.asarray(x).shape) for x in arrays]

    def s_tensor(*ts):
        gs = grad(fn(*ts), list(ts), create_graph=True)
        total = None
        for g, v in zip(gs, vs):
            term = tsum(g * Tensor(v))
            total = term if total is None else total + term
        return total

    ts = _as_tensors(arrays)
    analytic = grad(s_tensor(*ts), ts)

    def s_numeric(*arrs):
        ts2 = [Tensor(a.copy(), requires_grad=True) for a in arrs]
        return s_tensor(*ts2).item()

    numeric = numeric_grad(s_numeric, arrays, eps=eps)
    return max(_rel_err(a.data, n) for a, n in zip(analytic, numeric))
