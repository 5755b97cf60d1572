"""Minimal reverse-mode autodiff over 5-D (n, c, d, h, w) tensors.

Only the ops the segmentation network needs: same-padded 3D convolution,
max pooling, nearest-neighbor upsampling, ReLU/sigmoid, concatenation and
the elementwise/reduction arithmetic used by the loss. Gradients are
accumulated by a topological backward sweep from a one-element tensor.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class Tensor5:
    """A 5-D array plus optional provenance for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.ndim != 5:
            raise ShapeError(f"Tensor5 requires 5 dims (n, c, d, h, w), got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a one-element tensor (seed gradient 1)."""
        if self.data.size != 1:
            raise ShapeError("backward() must start from a one-element tensor")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for parent in t._parents:
                visit(parent)
            topo.append(t)

        visit(self)
        self._accumulate(np.ones_like(self.data))
        for t in reversed(topo):
            if t._backward is not None and t.requires_grad:
                t._backward(t.grad)

    # arithmetic used by the loss --------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, like=self)
        out_data = self.data + other.data

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor5(out_data, _parents=(self, other), _backward=back)

    def __mul__(self, other):
        other = _as_tensor(other, like=self)
        out_data = self.data * other.data

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor5(out_data, _parents=(self, other), _backward=back)

    def __truediv__(self, other):
        other = _as_tensor(other, like=self)
        out_data = self.data / other.data

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.shape)
                )

        return Tensor5(out_data, _parents=(self, other), _backward=back)

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_as_tensor(other, like=self))

    def __radd__(self, other):
        return self + other

    def __rmul__(self, other):
        return self * other

    def __rsub__(self, other):
        return (-self) + other

    def log(self):
        out_data = np.log(self.data)

        def back(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        return Tensor5(out_data, _parents=(self,), _backward=back)

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient is zero where the clamp is active."""
        out_data = np.clip(self.data, lo, hi)
        inside = (self.data > lo) & (self.data < hi)

        def back(g):
            if self.requires_grad:
                self._accumulate(g * inside)

        return Tensor5(out_data, _parents=(self,), _backward=back)

    def sum(self):
        """Sum of all elements as a (1,1,1,1,1) tensor."""
        out_data = self.data.sum(dtype=np.float64).reshape(1, 1, 1, 1, 1)

        def back(g):
            if self.requires_grad:
                self._accumulate(np.broadcast_to(g.reshape(()), self.shape))

        return Tensor5(out_data, _parents=(self,), _backward=back)


def _as_tensor(x, like: Tensor5) -> Tensor5:
    if isinstance(x, Tensor5):
        return x
    return Tensor5(np.full((1, 1, 1, 1, 1), float(x), dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    axes = tuple(i for i, (gs, ps) in enumerate(zip(g.shape, shape)) if ps == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def relu(x: Tensor5) -> Tensor5:
    out_data = np.maximum(x.data, 0)

    def back(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    return Tensor5(out_data, _parents=(x,), _backward=back)


def sigmoid(x: Tensor5) -> Tensor5:
    # stable two-branch evaluation
    pos = x.data >= 0
    ex = np.exp(np.where(pos, -x.data, x.data))
    s = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))

    def back(g):
        if x.requires_grad:
            x._accumulate(g * s * (1.0 - s))

    return Tensor5(s, _parents=(x,), _backward=back)


def softplus(x: Tensor5) -> Tensor5:
    """log(1 + exp(x)), evaluated without overflow; gradient is sigmoid(x)."""
    out_data = np.logaddexp(0.0, x.data).astype(x.data.dtype)

    def back(g):
        if x.requires_grad:
            pos = x.data >= 0
            ex = np.exp(np.where(pos, -x.data, x.data))
            s = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))
            x._accumulate(g * s)

    return Tensor5(out_data, _parents=(x,), _backward=back)


def concat(tensors: list[Tensor5]) -> Tensor5:
    """Concatenate along the channel axis."""
    out_data = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor5(out_data, _parents=tuple(tensors), _backward=back)


def conv3d(x: Tensor5, k: Tensor5, b: Tensor5) -> Tensor5:
    """Same-padded stride-1 cross-correlation.

    x: (n, ci, d, h, w); k: (co, ci, kd, kh, kw) with odd kernel dims;
    b: (1, co, 1, 1, 1).
    """
    n, ci, d, h, w = x.shape
    co, kci, kd, kh, kw = k.shape
    if kci != ci:
        raise ShapeError(f"conv3d channel mismatch: input {x.shape} vs kernel {k.shape}")
    if b.shape != (1, co, 1, 1, 1):
        raise ShapeError(f"conv3d bias must have shape (1, {co}, 1, 1, 1), got {b.shape}")
    if kd % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv3d kernel dims must be odd, got {k.shape}")
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    nk = kd * kh * kw
    nv = n * d * h * w
    offsets = [(i, j, l) for i in range(kd) for j in range(kh) for l in range(kw)]

    # im2col: one GEMM instead of per-offset tensordots
    xpt = np.pad(
        x.data.transpose(1, 0, 2, 3, 4), ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw))
    )
    cols = np.empty((ci, nk, n, d, h, w), dtype=x.data.dtype)
    for o, (i, j, l) in enumerate(offsets):
        cols[:, o] = xpt[:, :, i : i + d, j : j + h, l : l + w]
    cols2d = cols.reshape(ci * nk, nv)
    w2d = np.ascontiguousarray(k.data.reshape(co, ci * nk))
    out_data = (w2d @ cols2d).reshape(co, n, d, h, w).transpose(1, 0, 2, 3, 4) + b.data

    def back(g):
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3, 4)).reshape(1, co, 1, 1, 1))
        g2d = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4)).reshape(co, nv)
        if k.requires_grad:
            k._accumulate((g2d @ cols2d.T).reshape(co, ci, kd, kh, kw))
        if x.requires_grad:
            gcols = (w2d.T @ g2d).reshape(ci, nk, n, d, h, w)
            gxpt = np.zeros_like(xpt)
            for o, (i, j, l) in enumerate(offsets):
                gxpt[:, :, i : i + d, j : j + h, l : l + w] += gcols[:, o]
            gx = gxpt[:, :, pd : pd + d, ph : ph + h, pw : pw + w].transpose(1, 0, 2, 3, 4)
            x._accumulate(gx)

    return Tensor5(out_data, _parents=(x, k, b), _backward=back)


def maxpool3d(x: Tensor5, factor: int = 2) -> Tensor5:
    """Per-window max; ties route the gradient to the first window index."""
    n, c, d, h, w = x.shape
    f = int(factor)
    if f < 1 or d % f or h % f or w % f:
        raise ShapeError(f"maxpool3d factor {f} does not divide spatial dims of {x.shape}")
    windows = (
        x.data.reshape(n, c, d // f, f, h // f, f, w // f, f)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, d // f, h // f, w // f, f * f * f)
    )
    arg = windows.argmax(axis=-1)  # first occurrence wins ties
    out_data = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def back(g):
        if not x.requires_grad:
            return
        gw = np.zeros(windows.shape, dtype=np.float64)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = (
            gw.reshape(n, c, d // f, h // f, w // f, f, f, f)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(n, c, d, h, w)
        )
        x._accumulate(gx)

    return Tensor5(out_data, _parents=(x,), _backward=back)


def upsample_nn(x: Tensor5, factor: int) -> Tensor5:
    """Nearest-neighbor (voxel-repeat) upsampling by an integer factor."""
    f = int(factor)
    if f < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    out_data = x.data.repeat(f, axis=2).repeat(f, axis=3).repeat(f, axis=4)

    def back(g):
        if not x.requires_grad:
            return
        n, c, d, h, w = x.shape
        gx = g.reshape(n, c, d, f, h, f, w, f).sum(axis=(3, 5, 7))
        x._accumulate(gx)

    return Tensor5(out_data, _parents=(x,), _backward=back)
