"""Reverse-mode autodiff over numpy arrays.

Every backward rule here is written in terms of the same tensor ops, so a
backward pass run in create-graph mode produces tensors that can be
differentiated again. That is what lets a gradient-norm penalty train: the
penalty differentiates the discriminator's input gradient, a second-order
quantity.

Dtype policy: floating dtypes pass through untouched (training runs float32,
the gradient-check suites push float64 through the identical code path);
anything else is cast to float32 at construction. Binary ops refuse mixed
float dtypes, and python scalars adopt the tensor operand's dtype, so a
float32 graph cannot silently promote to float64.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus an optional graph record (op id, parent edges).

    `grad` is populated by backward() on leaves and is a plain ndarray.
    Graph edges store (parent, vjp) pairs; vjp maps the node's cotangent
    to the parent's cotangent and is itself built from tensor ops.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "op", "name")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf", name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(parents)
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        """Same values, cut loose from the graph."""
        return Tensor(self.data, op="detach")

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __float__(self):
        return self.item()

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op!r}{tag})"

    # arithmetic sugar; all graph logic lives in the module-level ops

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other, self)))

    def __rsub__(self, other):
        return add(_coerce(other, self), neg(self))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_const(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return mul(_coerce(other, self), pow_const(self, -1.0))

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, key):
        return crop(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_of(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_of(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_dtypes(a: Tensor, b: Tensor, op: str):
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: mixed dtypes {a.data.dtype} and {b.data.dtype}")


def _make(data, parents, op: str) -> Tensor:
    """Wrap an op result; parents that cannot need gradients are dropped."""
    if _grad_enabled:
        live = tuple((p, vjp) for p, vjp in parents if p.requires_grad)
        if live:
            return Tensor(data, requires_grad=True, parents=live, op=op)
    return Tensor(data, op=op)


def _topo(root: Tensor) -> list:
    """Parents-before-children ordering of the graph under root."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            stack.append((parent, False))
    return order


def grad(output: Tensor, inputs, create_graph=False, grad_output=None):
    """Cotangents of `output` with respect to `inputs`.

    With create_graph=True the returned tensors carry their own graphs and
    support another grad() call. Inputs the output does not depend on get
    zero tensors. Scalar outputs seed with 1; non-scalar outputs need an
    explicit grad_output.
    """
    single = isinstance(inputs, Tensor)
    ins = [inputs] if single else list(inputs)
    for t in ins:
        if not t.requires_grad:
            raise ValueError("grad() target does not require gradients")
    if grad_output is None:
        if output.data.size != 1:
            raise ValueError(f"non-scalar output (shape {output.data.shape}) needs grad_output")
        seed = Tensor(np.ones_like(output.data))
    else:
        seed = grad_output if isinstance(grad_output, Tensor) else Tensor(grad_output)
        if seed.data.shape != output.data.shape:
            raise ValueError(
                f"grad_output shape {seed.data.shape} != output shape {output.data.shape}"
            )

    # cotangents keyed by node id; every key refers to a live graph node,
    # so CPython id reuse cannot alias entries
    cot = {id(output): seed}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(_topo(output)):
            ct = cot.get(id(node))
            if ct is None:
                continue
            for parent, vjp in node._parents:
                g = vjp(ct)
                prev = cot.get(id(parent))
                cot[id(parent)] = g if prev is None else add(prev, g)
        results = []
        for t in ins:
            g = cot.get(id(t))
            results.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return results[0] if single else results


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into .grad for every requiring leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    leaves = [t for t in _topo(loss) if t.requires_grad and not t._parents]
    grads = grad(loss, leaves) if leaves else []
    for t, g in zip(leaves, grads):
        t.grad = g.data if t.grad is None else t.grad + g.data


def find_first_nonfinite(root: Tensor):
    """First tensor in forward order whose values are not finite, or None.

    Used by the training loop to name the op that produced a NaN before
    aborting.
    """
    for node in _topo(root):
        if not np.isfinite(node.data).all():
            return node
    return None


# ---------------------------------------------------------------- primitives


def _unbroadcast(ct: Tensor, shape) -> Tensor:
    """Sum a cotangent down to `shape` (inverse of numpy broadcasting)."""
    if ct.data.shape == shape:
        return ct
    extra = ct.data.ndim - len(shape)
    if extra:
        ct = sum_of(ct, axis=tuple(range(extra)))
    axes = tuple(i for i, (c, s) in enumerate(zip(ct.data.shape, shape)) if s == 1 and c != 1)
    if axes:
        ct = sum_of(ct, axis=axes, keepdims=True)
    return ct


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    _check_dtypes(a, b, "add")
    return _make(
        a.data + b.data,
        [(a, lambda ct: _unbroadcast(ct, a.data.shape)), (b, lambda ct: _unbroadcast(ct, b.data.shape))],
        "add",
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, [(a, neg)], "neg")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    _check_dtypes(a, b, "mul")
    return _make(
        a.data * b.data,
        [
            (a, lambda ct: _unbroadcast(mul(ct, b), a.data.shape)),
            (b, lambda ct: _unbroadcast(mul(ct, a), b.data.shape)),
        ],
        "mul",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul is 2-D only, got shapes {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    return _make(
        a.data @ b.data,
        [
            (a, lambda ct: matmul(ct, transpose(b))),
            (b, lambda ct: matmul(transpose(a), ct)),
        ],
        "matmul",
    )


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    return _make(a.data.reshape(shape), [(a, lambda ct: reshape(ct, a.data.shape))], "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    axes = tuple(int(x) for x in axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    return _make(a.data.transpose(axes), [(a, lambda ct: transpose(ct, inv))], "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    return _make(
        np.broadcast_to(a.data, shape).copy(),
        [(a, lambda ct: _unbroadcast(ct, a.data.shape))],
        "broadcast_to",
    )


def sum_of(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        axes = tuple(range(a.data.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.data.ndim,)
    else:
        axes = tuple(x % a.data.ndim for x in axis)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.data.shape))

    def vjp(ct):
        return broadcast_to(reshape(ct, kept), a.data.shape)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), [(a, vjp)], "sum")


def mean_of(a: Tensor, axis=None, keepdims=False) -> Tensor:
    s = sum_of(a, axis=axis, keepdims=keepdims)
    n = a.data.size // max(s.data.size, 1)
    return mul(s, 1.0 / n)


def absolute(a: Tensor) -> Tensor:
    sign = Tensor(np.sign(a.data))
    return _make(np.abs(a.data), [(a, lambda ct: mul(ct, sign))], "abs")


def pow_const(a: Tensor, p) -> Tensor:
    p = float(p)

    def vjp(ct):
        return mul(ct, mul(pow_const(a, p - 1.0), p))

    return _make(a.data**p, [(a, vjp)], "pow")


def leaky_relu(a: Tensor, slope=0.2) -> Tensor:
    factor = Tensor(np.where(a.data > 0, 1.0, slope).astype(a.data.dtype))
    return _make(a.data * factor.data, [(a, lambda ct: mul(ct, factor))], "leaky_relu")


def exp(a: Tensor) -> Tensor:
    def vjp(ct):
        return mul(ct, out)

    out = _make(np.exp(a.data), [(a, vjp)], "exp")
    return out


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), [(a, lambda ct: mul(ct, pow_const(a, -1.0)))], "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    # gradient passes only strictly inside the window
    inside = Tensor(((a.data > lo) & (a.data < hi)).astype(a.data.dtype))
    return _make(np.clip(a.data, lo, hi), [(a, lambda ct: mul(ct, inside))], "clip")


def _normalize_key(key, shape):
    if not isinstance(key, tuple):
        key = (key,)
    if len(key) > len(shape):
        raise ValueError(f"index {key!r} has more axes than shape {shape}")
    for k in key:
        if not isinstance(k, (int, np.integer, slice)):
            raise ValueError(f"only ints and slices are indexable, got {type(k).__name__}")
    return key


def crop(a: Tensor, key) -> Tensor:
    """Basic slice; the backward rule scatters into a zero tensor."""
    key = _normalize_key(key, a.data.shape)
    return _make(a.data[key].copy(), [(a, lambda ct: embed(ct, a.data.shape, key))], "crop")


def embed(a: Tensor, shape, key) -> Tensor:
    """Place `a` into a zero tensor of `shape` at `key`; adjoint of crop."""
    key = _normalize_key(key, shape)
    data = np.zeros(shape, dtype=a.data.dtype)
    data[key] = a.data
    return _make(data, [(a, lambda ct: crop(ct, key))], "embed")


def concat(tensors, axis=1) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ValueError("concat of zero tensors")
    nd = ts[0].data.ndim
    axis = axis % nd
    for t in ts[1:]:
        _check_dtypes(ts[0], t, "concat")
        if t.data.ndim != nd or any(
            i != axis and t.data.shape[i] != ts[0].data.shape[i] for i in range(nd)
        ):
            raise ValueError(
                f"concat shape mismatch on axis {axis}: {ts[0].data.shape} vs {t.data.shape}"
            )
    parents = []
    offset = 0
    for t in ts:
        start, stop = offset, offset + t.data.shape[axis]
        key = tuple(slice(None) if i != axis else slice(start, stop) for i in range(nd))
        parents.append((t, lambda ct, key=key: crop(ct, key)))
        offset = stop
    return _make(np.concatenate([t.data for t in ts], axis=axis), parents, "concat")


def unfold(x: Tensor, kernel: int, stride=1, dilation=1) -> Tensor:
    """im2col: (N,C,H,W) -> (N, C*K*K, out_h*out_w), taps in row-major order."""
    n, c, h, w = x.data.shape
    span = dilation * (kernel - 1) + 1
    if h < span or w < span:
        raise ValueError(f"unfold: input {h}x{w} smaller than kernel span {span}")
    oh = (h - span) // stride + 1
    ow = (w - span) // stride + 1
    cols = np.empty((n, c, kernel, kernel, oh, ow), dtype=x.data.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            i0, j0 = ki * dilation, kj * dilation
            cols[:, :, ki, kj] = x.data[
                :, :, i0 : i0 + (oh - 1) * stride + 1 : stride, j0 : j0 + (ow - 1) * stride + 1 : stride
            ]
    out = cols.reshape(n, c * kernel * kernel, oh * ow)

    def vjp(ct):
        return fold(ct, (h, w), kernel, stride=stride, dilation=dilation)

    return _make(out, [(x, vjp)], "unfold")


def fold(cols: Tensor, out_hw, kernel: int, stride=1, dilation=1) -> Tensor:
    """col2im, summing overlaps; adjoint of unfold with the same geometry."""
    n, ckk, l = cols.data.shape
    c = ckk // (kernel * kernel)
    if c * kernel * kernel != ckk:
        raise ValueError(f"fold: {ckk} rows not divisible by kernel {kernel}x{kernel}")
    h, w = (int(v) for v in out_hw)
    span = dilation * (kernel - 1) + 1
    oh = (h - span) // stride + 1
    ow = (w - span) // stride + 1
    if oh * ow != l:
        raise ValueError(f"fold: {l} columns but geometry gives {oh}x{ow}")
    parts = cols.data.reshape(n, c, kernel, kernel, oh, ow)
    out = np.zeros((n, c, h, w), dtype=cols.data.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            i0, j0 = ki * dilation, kj * dilation
            # for a fixed tap the destinations are stride-spaced, so no aliasing
            out[
                :, :, i0 : i0 + (oh - 1) * stride + 1 : stride, j0 : j0 + (ow - 1) * stride + 1 : stride
            ] += parts[:, :, ki, kj]

    def vjp(ct):
        u = unfold(ct, kernel, stride=stride, dilation=dilation)
        return u

    return _make(out, [(cols, vjp)], "fold")
