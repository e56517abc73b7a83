"""Minimal reverse-mode autodiff over numpy arrays.

Exactly the operations the forecasting model needs: matmul, 1-d
cross-correlation, layer norm, softmax, relu, elementwise arithmetic with
limited broadcasting, concat/transpose/reshape, row gather/scatter and
embedding lookup. Gradients are accumulated over a recorded graph walked in
reverse topological order; every op is checked against central finite
differences in the test suite.

The element type is a run-wide setting: float32 for training, float64 for
gradient checks.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .exceptions import DimensionError
from . import kernels

_default_dtype = np.float32


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported element type {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def use_dtype(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """A value node in the op graph. Data is treated as immutable once built."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: Sequence["Tensor"] = (),
                 backward: Callable[[np.ndarray], None] | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if self.data.shape != ():
                raise DimensionError(
                    f"backward() without seed needs a scalar, got shape {self.data.shape}")
            seed = np.ones((), dtype=self.data.dtype)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accum(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic sugar; non-Tensor operands become constants
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes do not agree: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=backward)


def conv1d(x: Tensor, kernel: Tensor, stride: int = 1, zero_pad: int = 0) -> Tensor:
    """Cross-correlation along the first axis (no kernel flip).

    x: (L, C_in), kernel: (K, C_in, C_out) -> (L_out, C_out) with
    L_out = floor((L + 2*pad - K) / stride) + 1.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise DimensionError(
            f"conv1d expects (L,C_in) and (K,C_in,C_out), got {x.data.shape} and {kernel.data.shape}")
    L, c_in = x.data.shape
    K, kc_in, _ = kernel.data.shape
    if kc_in != c_in:
        raise DimensionError(
            f"conv1d channel mismatch: input {x.data.shape} vs kernel {kernel.data.shape}")
    if stride < 1:
        raise DimensionError(f"conv1d stride must be >= 1, got {stride}")
    if L + 2 * zero_pad < K:
        raise DimensionError(
            f"conv1d window K={K} larger than padded input length {L + 2 * zero_pad}")

    xp = x.data
    if zero_pad:
        xp = np.pad(xp, ((zero_pad, zero_pad), (0, 0)))
    out_data = kernels.conv1d_forward(xp, kernel.data, stride)

    def backward(g):
        dxp, dw = kernels.conv1d_backward(xp, kernel.data, stride, np.ascontiguousarray(g))
        if x.requires_grad:
            x._accum(dxp[zero_pad:zero_pad + L] if zero_pad else dxp)
        if kernel.requires_grad:
            kernel._accum(dw)

    return Tensor(out_data, parents=(x, kernel), backward=backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0)

    def backward(g):
        if x.requires_grad:
            x._accum(g * mask)

    return Tensor(out_data, parents=(x,), backward=backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, shift-stabilized."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * out_data).sum(axis=-1, keepdims=True)
            x._accum(out_data * (g - inner))

    return Tensor(out_data, parents=(x,), backward=backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with the population (biased) variance."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm over an empty last axis")
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError(
            f"layer_norm scale shapes {gamma.data.shape}/{beta.data.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv_std * (dxhat - m1 - xhat * m2))

    return Tensor(out_data, parents=(x, gamma, beta), backward=backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    V = table.data.shape[0]
    bad = (ids < 0) | (ids >= V)
    if bad.any():
        offender = int(ids[bad][0] if ids.ndim else ids)
        raise IndexError(f"embedding id {offender} out of range [0, {V})")
    out_data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            np.add.at(dt, ids, g)
            table._accum(dt)

    return Tensor(out_data, parents=(table,), backward=backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return Tensor(out_data, parents=tuple(tensors), backward=backward)


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if x.requires_grad:
            x._accum(g.T)

    return Tensor(x.data.T, parents=(x,), backward=backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x._accum(g.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), backward=backward)


def gather_rows(x: Tensor, ids) -> Tensor:
    x = as_tensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    out_data = x.data[ids]

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, ids, g)
            x._accum(dx)

    return Tensor(out_data, parents=(x,), backward=backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    out_data = x.data[start:stop]

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            dx[start:stop] = g
            x._accum(dx)

    return Tensor(out_data, parents=(x,), backward=backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    out_data = x.data[:, start:stop]

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            dx[:, start:stop] = g
            x._accum(dx)

    return Tensor(out_data, parents=(x,), backward=backward)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum()

    def backward(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g, x.data.shape))

    return Tensor(out_data, parents=(x,), backward=backward)


def mean_all(x: Tensor) -> Tensor:
    return mul(sum_all(x), 1.0 / x.data.size)


def square(x: Tensor) -> Tensor:
    return mul(x, x)


def grad_check(f, inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Per element: |g_a - g_n| / max(1e-8, |g_a| + |g_n|). `f` must return a
    scalar Tensor and be re-runnable on the same inputs.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    if not np.isfinite(out.data):
        raise FloatingPointError(f"non-finite output {out.data} in grad_check")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    max_err = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*inputs).data)
            flat[i] = orig - eps
            fm = float(f(*inputs).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite output while perturbing input")
            gn = (fp - fm) / (2.0 * eps)
            denom = max(1e-8, abs(ga_flat[i]) + abs(gn))
            max_err = max(max_err, abs(ga_flat[i] - gn) / denom)
    return max_err
