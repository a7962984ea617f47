"""Reverse-mode autodiff over the small op set the sequence models need.

Tensors wrap numpy arrays; each op records a closure that scatters the
output gradient to its parents.  ``backward()`` runs the closures in
reverse topological order.  Gradients are only computed for tensors that
require them (directly or through a parent), so constant inputs cost
nothing extra.
"""

from __future__ import annotations

import numpy as np

from ..core import HypowearError


class ShapeMismatchError(HypowearError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatchError("backward() starts from a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def zero_grad(self):
        self.grad = None


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g.flags.writeable is False else g
    else:
        t.grad = t.grad + g


def _result(data, parents, backward_fn):
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires, tuple(p for p in parents), backward_fn if requires else None)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64))


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(f"matmul {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(out_data, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may be a 1-D bias broadcast over leading axes."""
    if a.shape != b.shape and not (b.data.ndim == 1 and a.shape[-1] == b.data.shape[0]):
        raise ShapeMismatchError(f"add {a.shape} + {b.shape}")
    out_data = a.data + b.data

    def backward_fn(g):
        _accumulate(a, g)
        if b.shape == a.shape:
            _accumulate(b, g)
        else:
            _accumulate(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))

    return _result(out_data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mul {a.shape} * {b.shape}")
    out_data = a.data * b.data

    def backward_fn(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(out_data, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def backward_fn(g):
        _accumulate(a, g * c)

    return _result(out_data, (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    z = a.data
    out_data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def backward_fn(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _result(out_data, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward_fn(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _result(out_data, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward_fn(g):
        _accumulate(a, g * (a.data > 0))

    return _result(out_data, (a,), backward_fn)


def concat(tensors: list, axis: int = -1) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _result(out_data, tuple(tensors), backward_fn)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError("slice_cols expects a 2-D tensor")
    out_data = a.data[:, start:stop]

    def backward_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            _accumulate(a, full)

    return _result(out_data, (a,), backward_fn)


def conv1d_causal(x: Tensor, w: Tensor, b: Tensor, dilation: int = 1) -> Tensor:
    """Causal 1-D convolution: x (N, Cin, T), w (Cout, Cin, K), b (Cout,).

    Output step t reads input steps t - (K-1)*dilation .. t only.
    """
    if x.data.ndim != 3 or w.data.ndim != 3 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatchError(f"conv1d {x.shape} with kernel {w.shape}")
    n, _, t_len = x.data.shape
    c_out, _, k = w.data.shape
    if b.data.shape != (c_out,):
        raise ShapeMismatchError("conv1d bias shape")
    pad = (k - 1) * dilation
    xpad = np.pad(x.data, ((0, 0), (0, 0), (pad, 0)))
    out_data = np.empty((n, c_out, t_len))
    out_data[:] = b.data[None, :, None]
    for j in range(k):
        out_data += np.einsum(
            "oi,nit->not", w.data[:, :, j], xpad[:, :, j * dilation : j * dilation + t_len]
        )

    def backward_fn(g):
        _accumulate(b, g.sum(axis=(0, 2)))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for j in range(k):
                gw[:, :, j] = np.einsum(
                    "not,nit->oi", g, xpad[:, :, j * dilation : j * dilation + t_len]
                )
            _accumulate(w, gw)
        if x.requires_grad:
            gxpad = np.zeros_like(xpad)
            for j in range(k):
                gxpad[:, :, j * dilation : j * dilation + t_len] += np.einsum(
                    "oi,not->nit", w.data[:, :, j], g
                )
            _accumulate(x, gxpad[:, :, pad:])

    return _result(out_data, (x, w, b), backward_fn)


def mean_pool_time(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeMismatchError("mean_pool_time expects (N, C, T)")
    t_len = x.data.shape[2]
    out_data = x.data.mean(axis=2)

    def backward_fn(g):
        _accumulate(x, np.repeat(g[:, :, None], t_len, axis=2) / t_len)

    return _result(out_data, (x,), backward_fn)


def slice_last_step(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeMismatchError("slice_last_step expects (N, C, T)")
    out_data = x.data[:, :, -1]

    def backward_fn(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, :, -1] = g
            _accumulate(x, full)

    return _result(out_data, (x,), backward_fn)


def bce_with_logits(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted binary cross-entropy from logits, normalized by total weight.

    With unit weights this is exactly the unweighted mean BCE.
    """
    z = logits.data.reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if z.shape != y.shape or z.shape != w.shape:
        raise ShapeMismatchError("logits, targets, weights must share length")
    w_total = w.sum()
    losses = np.maximum(z, 0.0) - z * y + np.logaddexp(0.0, -np.abs(z))
    out_data = np.array((w * losses).sum() / w_total)
    p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def backward_fn(g):
        _accumulate(logits, (g * w * (p - y) / w_total).reshape(logits.data.shape))

    return _result(out_data, (logits,), backward_fn)
