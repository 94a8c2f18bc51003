"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps a float64 ndarray plus a gradient buffer and a closure
that routes upstream gradients to its parents. ``backward`` runs the
closures in reverse topological order. Everything is deterministic;
randomness (dropout) enters only through explicitly passed generators.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, grad: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(out):
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(out.grad, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul_const(a: Tensor, c: np.ndarray | float) -> Tensor:
    """Elementwise product with a constant (no gradient through c)."""
    c = np.asarray(c, dtype=np.float64)

    def backward(out):
        _accumulate(a, _unbroadcast(out.grad * c, a.shape))

    return _make(a.data * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def backward(out):
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    return _make(a.data @ b.data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(out):
        _accumulate(a, out.grad * mask)

    return _make(a.data * mask, (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: train-mode scaling by 1/(1-p) preserves the mean."""
    if not training or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs a generator")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul_const(a, mask)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(out):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(part, out.grad[tuple(sl)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def global_avg_pool(a: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    n, c, h, w = a.shape

    def backward(out):
        _accumulate(a, np.broadcast_to(out.grad[:, :, None, None], a.shape) / (h * w))

    return _make(a.data.mean(axis=(2, 3)), (a,), backward)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.data - target

    def backward(out):
        _accumulate(pred, out.grad * 2.0 * diff / diff.size)

    return _make(np.array(np.mean(diff * diff)), (pred,), backward)


# ---------------------------------------------------------------------------
# Convolution via im2col

_COL_INDEX_CACHE: dict = {}


def _col_indices(c, h, w, k, stride, pad):
    key = (c, h, w, k, stride, pad)
    hit = _COL_INDEX_CACHE.get(key)
    if hit is not None:
        return hit
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    ky, kx = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    iy = (oy.reshape(-1, 1) * stride + ky.reshape(1, -1)).astype(np.intp)  # (P, KK)
    ix = (ox.reshape(-1, 1) * stride + kx.reshape(1, -1)).astype(np.intp)
    # scatter target: flat index into (C, HP, WP) for every (P, C*KK) column
    per_channel = iy * wp + ix  # (P, KK)
    flat = (
        per_channel[:, None, :] + (np.arange(c) * hp * wp)[None, :, None]
    ).reshape(-1, c * k * k)  # (P, C*KK)
    entry = (oh, ow, iy, ix, flat, hp, wp)
    _COL_INDEX_CACHE[key] = entry
    return entry


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 2, pad: int = 1) -> Tensor:
    """2-D convolution, NCHW layout, square kernel."""
    n, c, h, w = x.shape
    oc, c2, k, _ = weight.shape
    assert c == c2, (c, c2)
    oh, ow, iy, ix, flat, hp, wp = _col_indices(c, h, w, k, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = xp[:, :, iy, ix]  # (N, C, P, KK)
    cols = cols.transpose(0, 2, 1, 3).reshape(n, -1, c * k * k)  # (N, P, CKK)
    wmat = weight.data.reshape(oc, c * k * k)
    out_data = np.einsum("npk,ok->nop", cols, wmat) + bias.data[None, :, None]
    out_data = out_data.reshape(n, oc, oh, ow)

    def backward(out):
        dout = out.grad.reshape(n, oc, -1)  # (N, OC, P)
        _accumulate(bias, dout.sum(axis=(0, 2)))
        _accumulate(weight, np.einsum("nop,npk->ok", dout, cols).reshape(weight.shape))
        if x.requires_grad:
            dcols = np.einsum("nop,ok->npk", dout, wmat)  # (N, P, CKK)
            offsets = (np.arange(n) * (c * hp * wp))[:, None, None]
            target = np.broadcast_to(flat[None], dcols.shape) + offsets
            dxp = np.bincount(
                target.ravel(), weights=dcols.ravel(), minlength=n * c * hp * wp
            ).reshape(n, c, hp, wp)
            _accumulate(x, dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp)

    return _make(out_data, (x, weight, bias), backward)


# ---------------------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Populate .grad over the graph reachable from root (a scalar or any shape)."""
    topo: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)
