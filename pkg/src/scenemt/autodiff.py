"""Dense float64 tensors with reverse-mode automatic differentiation.

Deliberately small: scalars and 2-D matrices, the dozen operations the
translation model needs, and a tape replayed in reverse build order.
Everything runs in double precision so finite-difference checks can be
tight.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, NumericError, ParseError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise DimensionError("backward requires a scalar output")
        self.grad = np.ones_like(self.data)
        Tape.trace(self).replay()

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def t(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of the computation reaching one output tensor.

    Nodes are collected in topological order; replay() calls each recorded
    backward closure exactly once, in reverse.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
        nodes, visited, stack = [], set(), [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return cls(nodes)

    def replay(self):
        for node in reversed(self.nodes):
            if node._backward is not None:
                node._backward()


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    # reduce a gradient back to the shape it was broadcast from
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes do not agree: {a.data.shape} x {b.data.shape}"
        )
    out_data = a.data @ b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out = _make(out_data, (a, b), backward)
    return out


def transpose(a):
    a = _as_tensor(a)

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad.T)

    out = _make(a.data.T, (a,), backward)
    return out


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * mask)

    out = _make(a.data * mask, (a,), backward)
    return out


def softmax_rows(x):
    """Row-wise softmax with max subtraction; each output row sums to 1."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward():
        if x.requires_grad:
            g = out.grad
            x.accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out = _make(s, (x,), backward)
    return out


def embedding(table, ids):
    """Gather rows of `table` (Tensor[V, d]) at integer positions `ids`."""
    ids = np.asarray(ids, dtype=np.intp)
    out_data = table.data[ids]

    def backward():
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, out.grad)
            table.accumulate(gt)

    out = _make(out_data, (table,), backward)
    return out


def layer_norm(x, gain, bias, eps=1e-6):
    """Per-row normalization over the last axis with learned gain/bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gain.data * xhat + bias.data

    def backward():
        g = out.grad
        if bias.requires_grad:
            bias.accumulate(_unbroadcast(g, bias.data.shape))
        if gain.requires_grad:
            gain.accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate(inv * (gx - m1 - xhat * m2))

    out = _make(out_data, (x, gain, bias), backward)
    return out


def cross_entropy_smoothed(logits, targets, smoothing):
    """Label-smoothed cross entropy, summed over rows.

    The target distribution is (1-eps) on the gold id plus eps spread
    uniformly over the whole vocabulary. Returns a scalar Tensor.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.intp)
    n, v = logits.data.shape
    if targets.shape != (n,):
        raise DimensionError("one target id per logits row required")
    q = np.full((n, v), smoothing / v)
    q[np.arange(n), targets] += 1.0 - smoothing

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    loss = -(q * logp).sum()

    def backward():
        if logits.requires_grad:
            softmax = np.exp(logp)
            logits.accumulate(float(out.grad) * (softmax - q))

    out = _make(loss, (logits,), backward)
    return out


def sum_all(x):
    x = _as_tensor(x)

    def backward():
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(out.grad)))

    out = _make(x.data.sum(), (x,), backward)
    return out


def mean_all(x):
    x = _as_tensor(x)
    n = x.data.size

    def backward():
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(out.grad) / n))

    out = _make(x.data.mean(), (x,), backward)
    return out


def assert_finite(x, context="tensor", step=None):
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite value in {context}", step=step)


def grad_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f` must map the Tensor `x` to a scalar Tensor. The relative error per
    coordinate is |numeric - analytic| / max(1, |analytic|).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x.zero_grad()
    out = f(x)
    if out.data.size != 1:
        raise DimensionError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            fp = float(f(x).data)
            flat[i] = saved - h
            fm = float(f(x).data)
            flat[i] = saved
            numeric[i] = (fp - fm) / (2.0 * h)
    numeric = numeric.reshape(x.data.shape)
    denom = np.maximum(1.0, np.abs(analytic))
    return float((np.abs(numeric - analytic) / denom).max())


# -- checkpoint serialization -------------------------------------------------
#
# Binary layout: one ASCII header line "SCKPT <count>", then per tensor an
# ASCII line "<name> <ndim> <dim0> <dim1> ..." followed by the raw
# little-endian float64 buffer.

_CKPT_MAGIC = b"SCKPT"


def save_checkpoint(path, named_arrays):
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + f" {len(named_arrays)}\n".encode())
        for name, arr in named_arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"{name} {arr.ndim}{' ' if dims else ''}{dims}\n".encode())
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    out = {}
    with open(path, "rb") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != _CKPT_MAGIC:
            raise ParseError("not a checkpoint file")
        count = int(header[1])
        for _ in range(count):
            fields = fh.readline().split()
            if len(fields) < 2:
                raise ParseError("truncated checkpoint header entry")
            name = fields[0].decode()
            ndim = int(fields[1])
            shape = tuple(int(d) for d in fields[2:2 + ndim])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ParseError(f"truncated tensor data for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out
