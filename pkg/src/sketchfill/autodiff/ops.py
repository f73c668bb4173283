"""Network-level ops composed from engine primitives.

Shape conventions are NCHW throughout. Padding formulas:
    conv2d        out = (in + 2*padding - dilation*(kernel-1) - 1) // stride + 1
    conv2d_transpose
                  out = (in - 1)*stride - 2*padding + kernel + output_padding
so a 3x3 conv with padding=1 preserves the spatial size, stride 2 halves it
(even inputs), and a 3x3 transposed conv with stride=2, padding=1,
output_padding=1 exactly doubles it.
"""

from __future__ import annotations

import numpy as np

from .engine import (
    Tensor,
    absolute,
    add,
    broadcast_to,
    clip,
    concat,
    crop,
    embed,
    exp,
    fold,
    grad,
    leaky_relu,
    log,
    matmul,
    mean_of,
    mul,
    neg,
    pow_const,
    reshape,
    sum_of,
    transpose,
    unfold,
)

mean = mean_of
tsum = sum_of


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        return add(a, neg(b))
    return add(a, neg(b) if isinstance(b, Tensor) else -b)


def sqrt(a: Tensor) -> Tensor:
    return pow_const(a, 0.5)


def sum_sq(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return sum_of(mul(a, a), axis=axis, keepdims=keepdims)


def flatten(a: Tensor, start_axis=1) -> Tensor:
    shape = a.data.shape
    return reshape(a, shape[:start_axis] + (-1,))


def pad2d(x: Tensor, padding: int) -> Tensor:
    """Symmetric zero padding of the two trailing spatial dims."""
    if padding == 0:
        return x
    n, c, h, w = x.data.shape
    key = (slice(None), slice(None), slice(padding, padding + h), slice(padding, padding + w))
    return embed(x, (n, c, h + 2 * padding, w + 2 * padding), key)


def conv2d(x: Tensor, weight: Tensor, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    """Cross-correlation with weight (out_ch, in_ch, K, K) over x (N,C,H,W)."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d needs 4-D input and weight, got {x.data.shape} and {weight.data.shape}")
    n, c, h, w = x.data.shape
    co, ci, kh, kw = weight.data.shape
    if kh != kw:
        raise ValueError(f"square kernels only, got {weight.data.shape}")
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {x.data.shape}, weight {weight.data.shape}")
    xp = pad2d(x, padding)
    cols = unfold(xp, kh, stride=stride, dilation=dilation)  # (N, C*K*K, L)
    l = cols.data.shape[2]
    lhs = reshape(transpose(cols, (1, 0, 2)), (c * kh * kw, n * l))
    out = matmul(reshape(weight, (co, c * kh * kw)), lhs)  # (Co, N*L)
    out = transpose(reshape(out, (co, n, l)), (1, 0, 2))
    span = dilation * (kh - 1) + 1
    oh = (h + 2 * padding - span) // stride + 1
    ow = (w + 2 * padding - span) // stride + 1
    out = reshape(out, (n, co, oh, ow))
    if bias is not None:
        out = add(out, reshape(bias, (1, co, 1, 1)))
    return out


def conv2d_transpose(
    x: Tensor, weight: Tensor, bias=None, stride=2, padding=1, output_padding=1
) -> Tensor:
    """Adjoint of conv2d; weight laid out (in_ch, out_ch, K, K)."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(
            f"conv2d_transpose needs 4-D input and weight, got {x.data.shape} and {weight.data.shape}"
        )
    n, ci, h, w = x.data.shape
    wi, co, kh, kw = weight.data.shape
    if kh != kw:
        raise ValueError(f"square kernels only, got {weight.data.shape}")
    if wi != ci:
        raise ValueError(
            f"conv2d_transpose channel mismatch: input {x.data.shape}, weight {weight.data.shape}"
        )
    if output_padding >= stride:
        raise ValueError(f"output_padding {output_padding} must be < stride {stride}")
    wm = reshape(weight, (ci, co * kh * kw))
    xm = reshape(transpose(x, (1, 0, 2, 3)), (ci, n * h * w))
    cols = matmul(transpose(wm), xm)  # (Co*K*K, N*H*W)
    cols = transpose(reshape(cols, (co * kh * kw, n, h * w)), (1, 0, 2))
    # fold onto a canvas large enough for the crop below
    full_h = (h - 1) * stride + kh + output_padding
    full_w = (w - 1) * stride + kw + output_padding
    canvas = fold(cols, (full_h, full_w), kh, stride=stride, dilation=1)
    oh = (h - 1) * stride - 2 * padding + kh + output_padding
    ow = (w - 1) * stride - 2 * padding + kw + output_padding
    out = crop(
        canvas, (slice(None), slice(None), slice(padding, padding + oh), slice(padding, padding + ow))
    )
    if bias is not None:
        out = add(out, reshape(bias, (1, co, 1, 1)))
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)) in the overflow-free split form."""
    m = absolute(a)
    return add(mul(add(a, m), 0.5), log(add(exp(neg(m)), 1.0)))
