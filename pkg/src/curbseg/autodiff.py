"""A small reverse-mode autodiff engine over float64 numpy arrays.

Covers exactly the operations the segmentation network and the loss group
need: broadcast arithmetic, log/tanh/pow, softmax, gather-style indexing,
concatenation, reductions, nearest-neighbor upsampling, and a strided
same-padded 3-D cross-correlation.  Everything is float64 so central
finite differences are a decisive check on every backward rule.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _backward: Callable[[np.ndarray], None] | None = None,
        _parents: tuple["Tensor", ...] = (),
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = _backward
        self._parents = _parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this node.

        ``seed`` defaults to ones (a scalar loss seeds with 1.0).
        """
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        if seed is None:
            seed = np.ones_like(self.data)
        self._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __getitem__(self, idx):
        return gather(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _backward=backward if req else None,
                  _parents=tuple(parents) if req else ())


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return _node(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - t * t))

    return _node(t, (x,), backward)


def pow_const(x: Tensor, exponent) -> Tensor:
    """x ** e with a constant (non-differentiated) exponent array or scalar."""
    x = as_tensor(x)
    e = np.asarray(exponent, dtype=np.float64)
    out_data = x.data ** e

    def backward(g):
        # d/dx x^e = e * x^(e-1); define the derivative as 0 where e == 0
        # so integer-zero exponents do not produce 0 * inf at x == 0.
        d = np.where(e == 0, 0.0, e * x.data ** np.where(e == 0, 1.0, e - 1.0))
        x._accumulate(g * d)

    return _node(out_data, (x,), backward)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    """Lower clamp; gradient passes through only where unclamped."""
    x = as_tensor(x)
    mask = x.data >= lo
    out_data = np.maximum(x.data, lo)

    def backward(g):
        x._accumulate(g * mask)

    return _node(out_data, (x,), backward)


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        x._accumulate(s * (g - inner))

    return _node(s, (x,), backward)


def gather(x: Tensor, idx) -> Tensor:
    """Indexing/gather; backward scatter-adds into the source positions."""
    x = as_tensor(x)
    out_data = x.data[idx]

    def backward(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, idx, g)
        x._accumulate(buf)

    return _node(out_data, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.data.shape

    def backward(g):
        x._accumulate(g.reshape(orig))

    return _node(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    x = as_tensor(x)
    axes_t = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    inv = np.argsort(axes_t)

    def backward(g):
        x._accumulate(g.transpose(inv))

    return _node(x.data.transpose(axes_t), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tsum(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.data.shape).copy())
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _node(x.data.sum(axis=axis), (x,), backward)


def tmean(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g / count, x.data.shape).copy())
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis) / count, x.data.shape).copy())

    return _node(x.data.mean(axis=axis), (x,), backward)


def dot_const(x: Tensor, w: np.ndarray) -> Tensor:
    """Inner product of a 1-D tensor with a constant weight vector."""
    x = as_tensor(x)
    w = np.asarray(w, dtype=np.float64)

    def backward(g):
        x._accumulate(g * w)

    return _node(np.dot(x.data, w), (x,), backward)


# -- convolution -------------------------------------------------------------


def _same_pad(n: int, k: int, s: int) -> tuple[int, int, int]:
    """(out_len, pad_lo, pad_hi) for ceil-mode same padding."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    lo = total // 2
    return out, lo, total - lo


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1) -> Tensor:
    """Strided 3-D cross-correlation with same (ceil-mode) zero padding.

    x: (C_in, H, W, D); weight: (C_out, C_in, k1, k2, k3); bias: (C_out,).
    Output spatial dims are ceil(dim / stride).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    cin, h, w, d = x.data.shape
    cout, cin_w, k1, k2, k3 = weight.data.shape
    if cin_w != cin:
        raise ValueError(f"channel mismatch: input has {cin}, kernel expects {cin_w}")
    s = int(stride)
    if s < 1:
        raise ValueError("stride must be >= 1")

    if (k1, k2, k3) == (1, 1, 1) and s == 1:
        # pointwise fast path: plain channel mixing
        w2 = weight.data.reshape(cout, cin)
        out_data = (w2 @ x.data.reshape(cin, -1)).reshape(cout, h, w, d)
        if bias is not None:
            out_data += bias.data[:, None, None, None]
        parents = (x, weight) if bias is None else (x, weight, bias)

        def backward_pointwise(g):
            g2 = g.reshape(cout, -1)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g2.sum(axis=1))
            if weight.requires_grad:
                weight._accumulate((g2 @ x.data.reshape(cin, -1).T).reshape(weight.data.shape))
            if x.requires_grad:
                x._accumulate((w2.T @ g2).reshape(x.data.shape))

        return _node(out_data, parents, backward_pointwise)

    ho, plo1, phi1 = _same_pad(h, k1, s)
    wo, plo2, phi2 = _same_pad(w, k2, s)
    do, plo3, phi3 = _same_pad(d, k3, s)
    xp = np.pad(x.data, ((0, 0), (plo1, phi1), (plo2, phi2), (plo3, phi3)))

    # im2col: (C_in * k1*k2*k3, Ho*Wo*Do) patch matrix, then one matmul
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k1, k2, k3), axis=(1, 2, 3))
    windows = windows[:, ::s, ::s, ::s]
    cols = windows.transpose(0, 4, 5, 6, 1, 2, 3).reshape(cin * k1 * k2 * k3, -1)
    w2 = weight.data.reshape(cout, -1)
    out_data = (w2 @ cols).reshape(cout, ho, wo, do)
    if bias is not None:
        out_data += bias.data[:, None, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(cout, -1)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=1))
        if weight.requires_grad:
            weight._accumulate((g2 @ cols.T).reshape(weight.data.shape))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            dcols = (w2.T @ g2).reshape(cin, k1, k2, k3, ho, wo, do)
            for a in range(k1):
                for b_ in range(k2):
                    for c in range(k3):
                        dxp[:, a : a + s * (ho - 1) + 1 : s,
                            b_ : b_ + s * (wo - 1) + 1 : s,
                            c : c + s * (do - 1) + 1 : s] += dcols[:, a, b_, c]
            x._accumulate(dxp[:, plo1 : plo1 + h, plo2 : plo2 + w, plo3 : plo3 + d])

    return _node(out_data, parents, backward)


def upsample_nearest(x: Tensor, factor: int, target_shape: tuple[int, int, int]) -> Tensor:
    """Nearest-neighbor upsampling by an integer factor, cropped to target.

    out[c, i, j, l] = x[c, i // factor, j // factor, l // factor].
    """
    x = as_tensor(x)
    ho, wo, do = target_shape
    ih = np.arange(ho) // factor
    iw = np.arange(wo) // factor
    il = np.arange(do) // factor
    if ih.max() >= x.data.shape[1] or iw.max() >= x.data.shape[2] or il.max() >= x.data.shape[3]:
        raise ValueError(f"target {target_shape} too large for {x.data.shape} at factor {factor}")
    out_data = x.data[:, ih[:, None, None], iw[None, :, None], il[None, None, :]]

    def backward(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, (slice(None), ih[:, None, None], iw[None, :, None], il[None, None, :]), g)
        x._accumulate(buf)

    return _node(out_data, (x,), backward)
