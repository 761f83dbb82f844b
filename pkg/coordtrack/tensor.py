"""Tensor
===================
Dense float64 tensors with taped reverse-mode differentiation, and the
kernels the tracker is built from (matmul, softmax, layer norm, GELU,
convolutions, pooling, bilinear upsampling).

Every op records its parents and a backward closure only when one of its
inputs requires a gradient, so inference under ``no_grad`` builds no tape.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import contextlib
import functools
import math
import threading
from typing import Callable
from typing import Dict
from typing import Iterator
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from coordtrack.errors import ContractViolation

Grads = Tuple[Optional[np.ndarray], ...]
BackwardFn = Callable[[np.ndarray], Grads]
Operand = Union["Tensor", np.ndarray, float, int]

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording in the current thread."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """n-dimensional float64 array plus the tape entry that produced it.

    Ops never modify their inputs. Only the owner of a parameter tensor
    (its ParamStore) rebinds ``data``.
    """

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data: Union[np.ndarray, float, Sequence[float]],
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _wrap(
        cls,
        data: np.ndarray,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[BackwardFn] = None,
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        if backward is not None and grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: object) -> "Tensor":
        return getitem(self, index)


def as_tensor(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# tape traversal


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(output: Tensor, seed: Optional[np.ndarray] = None) -> Dict[int, np.ndarray]:
    """Reverse sweep from ``output``. Returns leaf gradients keyed by ``id``."""
    if not output.requires_grad:
        return {}
    if seed is None:
        seed = np.ones_like(output.data)
    grads: Dict[int, np.ndarray] = {id(output): seed}
    leaves: Dict[int, np.ndarray] = {}
    for node in reversed(_topological_order(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def grad(output: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
    """Gradients of a scalar ``output`` with respect to leaf tensors."""
    if output.data.size != 1:
        raise ContractViolation(f"grad() needs a scalar output, got shape {output.shape}")
    leaves = backward(output)
    return [leaves.get(id(t), np.zeros_like(t.data)) for t in wrt]


# elementwise arithmetic


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape

    def back(g: np.ndarray) -> Grads:
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._wrap(a.data + b.data, (a, b), back)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape

    def back(g: np.ndarray) -> Grads:
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._wrap(a.data - b.data, (a, b), back)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g: np.ndarray) -> Grads:
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._wrap(ad * bd, (a, b), back)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g: np.ndarray) -> Grads:
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return Tensor._wrap(out, (a, b), back)


def neg(x: Operand) -> Tensor:
    x = as_tensor(x)
    return Tensor._wrap(-x.data, (x,), lambda g: (-g,))


def power(x: Operand, exponent: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def back(g: np.ndarray) -> Grads:
        return (g * exponent * xd ** (exponent - 1),)

    return Tensor._wrap(xd ** exponent, (x,), back)


def exp(x: Operand) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor._wrap(out, (x,), lambda g: (g * out,))


def log(x: Operand) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return Tensor._wrap(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Operand) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return Tensor._wrap(out, (x,), lambda g: (g * 0.5 / out,))


def sin(x: Operand) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return Tensor._wrap(np.sin(xd), (x,), lambda g: (g * np.cos(xd),))


def arcsin(x: Operand) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if np.any(np.abs(xd) > 1.0):
        raise ContractViolation("arcsin() argument outside [-1, 1]")
    return Tensor._wrap(np.arcsin(xd), (x,), lambda g: (g / np.sqrt(1.0 - xd * xd),))


def absolute(x: Operand) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return Tensor._wrap(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def maximum(a: Operand, b: Operand) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def back(g: np.ndarray) -> Grads:
        return (
            _unbroadcast(np.where(pick_a, g, 0.0), a.data.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), b.data.shape),
        )

    return Tensor._wrap(np.where(pick_a, a.data, b.data), (a, b), back)


def minimum(a: Operand, b: Operand) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def back(g: np.ndarray) -> Grads:
        return (
            _unbroadcast(np.where(pick_a, g, 0.0), a.data.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), b.data.shape),
        )

    return Tensor._wrap(np.where(pick_a, a.data, b.data), (a, b), back)


def clip(x: Operand, low: float, high: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return Tensor._wrap(np.clip(x.data, low, high), (x,), lambda g: (np.where(inside, g, 0.0),))


# reductions and shape plumbing


def sum(x: Operand, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.data.shape

    def back(g: np.ndarray) -> Grads:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._wrap(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Operand, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    total = sum(x, axis=axis, keepdims=keepdims)
    count = x.data.size // max(total.data.size, 1)
    return total / float(count)


def reshape(x: Operand, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    original = x.data.shape
    out = x.data.reshape(tuple(shape))
    return Tensor._wrap(out, (x,), lambda g: (g.reshape(original),))


def transpose(x: Operand, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._wrap(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def getitem(x: Operand, index: object) -> Tensor:
    x = as_tensor(x)
    shape = x.data.shape

    def back(g: np.ndarray) -> Grads:
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._wrap(np.array(x.data[index]), (x,), back)


def concat(xs: Sequence[Operand], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other extents must agree."""
    tensors = [as_tensor(t) for t in xs]
    if not tensors:
        raise ContractViolation("concat() needs at least one tensor")
    ref = tensors[0].data
    ax = axis % ref.ndim
    for t in tensors[1:]:
        d = t.data
        if d.ndim != ref.ndim or any(d.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ContractViolation(
                f"concat() along axis {axis}: shapes {ref.shape} and {d.shape} disagree"
            )
    sizes = [t.data.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g: np.ndarray) -> Grads:
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return Tensor._wrap(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), back)


# linear algebra


def matmul(a: Operand, b: Operand) -> Tensor:
    """Matrix product over the last two axes, leading axes batched."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ContractViolation(f"matmul() shape mismatch: {ad.shape} x {bd.shape}")
    if ad.shape[:-2] != bd.shape[:-2] and ad.ndim > 2 and bd.ndim > 2:
        raise ContractViolation(f"matmul() batch mismatch: {ad.shape} x {bd.shape}")

    def back(g: np.ndarray) -> Grads:
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._wrap(np.matmul(ad, bd), (a, b), back)


def softmax(x: Operand, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def back(g: np.ndarray) -> Grads:
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return Tensor._wrap(out, (x,), back)


def log_softmax(x: Operand, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def back(g: np.ndarray) -> Grads:
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return Tensor._wrap(out, (x,), back)


def layer_norm(x: Operand, gamma: Operand, beta: Operand, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.data.shape[-1]
    if gamma.data.shape != (width,) or beta.data.shape != (width,):
        raise ContractViolation(
            f"layer_norm() affine shapes {gamma.shape}/{beta.shape} do not match width {width}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    gd = gamma.data

    def back(g: np.ndarray) -> Grads:
        gxhat = g * gd
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._wrap(xhat * gd + beta.data, (x, gamma, beta), back)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Operand) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + special.erf(xd * _INV_SQRT2))

    def back(g: np.ndarray) -> Grads:
        return (g * (cdf + xd * _INV_SQRT2PI * np.exp(-0.5 * xd * xd)),)

    return Tensor._wrap(xd * cdf, (x,), back)


# spatial kernels, inputs laid out C x H x W


def _check_chw(x: np.ndarray, op: str) -> None:
    if x.ndim != 3:
        raise ContractViolation(f"{op}() expects a C x H x W tensor, got shape {x.shape}")


def conv2d(
    x: Operand,
    w: Operand,
    b: Optional[Operand] = None,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """Cross-correlation of a C_in x H x W map with C_out x C_in x k x k filters."""
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    _check_chw(xd, "conv2d")
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise ContractViolation(f"conv2d() expects square C_out x C_in x k x k filters, got {wd.shape}")
    c_out, c_in, k, _ = wd.shape
    if xd.shape[0] != c_in:
        raise ContractViolation(f"conv2d() channel mismatch: input {xd.shape} vs filters {wd.shape}")
    if stride < 1 or k < 1 or pad < 0:
        raise ContractViolation(f"conv2d() needs k, stride >= 1 and pad >= 0 (k={k}, stride={stride}, pad={pad})")
    _, h, wid = xd.shape
    span_h, span_w = h + 2 * pad - k, wid + 2 * pad - k
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ContractViolation(
            f"conv2d() output extent not integral for input {xd.shape}, k={k}, stride={stride}, pad={pad}"
        )
    h_out, w_out = span_h // stride + 1, span_w // stride + 1
    xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad))) if pad else xd
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * k * k, h_out * w_out)
    w2 = wd.reshape(c_out, c_in * k * k)
    out = (w2 @ cols).reshape(c_out, h_out, w_out)
    parents: Tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (c_out,):
            raise ContractViolation(f"conv2d() bias shape {b.shape} does not match {c_out} filters")
        out = out + b.data[:, None, None]
        parents = (x, w, b)

    def back(g: np.ndarray) -> Grads:
        g2 = g.reshape(c_out, h_out * w_out)
        gw = (g2 @ cols.T).reshape(wd.shape)
        gcols = (w2.T @ g2).reshape(c_in, k, k, h_out, w_out)
        gxp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += gcols[:, i, j]
        gx = gxp[:, pad:pad + h, pad:pad + wid]
        if len(parents) == 3:
            return gx, gw, g.sum(axis=(1, 2))
        return gx, gw

    return Tensor._wrap(out, parents, back)


def conv_transpose2d(x: Operand, w: Operand, b: Optional[Operand] = None, stride: int = 2) -> Tensor:
    """Transposed convolution with C_in x C_out x k x k filters and no padding."""
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    _check_chw(xd, "conv_transpose2d")
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3] or wd.shape[0] != xd.shape[0]:
        raise ContractViolation(
            f"conv_transpose2d() expects C_in x C_out x k x k filters matching input {xd.shape}, got {wd.shape}"
        )
    if stride < 1:
        raise ContractViolation(f"conv_transpose2d() needs stride >= 1, got {stride}")
    _, c_out, k, _ = wd.shape
    _, h, wid = xd.shape
    h_out, w_out = (h - 1) * stride + k, (wid - 1) * stride + k
    cols = np.tensordot(wd, xd, axes=([0], [0]))
    out = np.zeros((c_out, h_out, w_out))
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * h:stride, j:j + stride * wid:stride] += cols[:, i, j]
    parents: Tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (c_out,):
            raise ContractViolation(f"conv_transpose2d() bias shape {b.shape} does not match {c_out} outputs")
        out = out + b.data[:, None, None]
        parents = (x, w, b)

    def back(g: np.ndarray) -> Grads:
        gcols = np.empty((c_out, k, k, h, wid))
        for i in range(k):
            for j in range(k):
                gcols[:, i, j] = g[:, i:i + stride * h:stride, j:j + stride * wid:stride]
        gx = np.tensordot(wd, gcols, axes=([1, 2, 3], [0, 1, 2]))
        gw = np.tensordot(xd, gcols, axes=([1, 2], [3, 4]))
        if len(parents) == 3:
            return gx, gw, g.sum(axis=(1, 2))
        return gx, gw

    return Tensor._wrap(out, parents, back)


def max_pool2x2(x: Operand) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first window cell."""
    x = as_tensor(x)
    xd = x.data
    _check_chw(xd, "max_pool2x2")
    c, h, wid = xd.shape
    if h % 2 or wid % 2:
        raise ContractViolation(f"max_pool2x2() needs even extents, got {xd.shape}")
    cells = xd.reshape(c, h // 2, 2, wid // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, wid // 2, 4)
    idx = np.argmax(cells, axis=-1)[..., None]
    out = np.take_along_axis(cells, idx, axis=-1)[..., 0]

    def back(g: np.ndarray) -> Grads:
        gcells = np.zeros(cells.shape)
        np.put_along_axis(gcells, idx, g[..., None], axis=-1)
        gx = gcells.reshape(c, h // 2, wid // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, wid)
        return (gx,)

    return Tensor._wrap(out, (x,), back)


@functools.lru_cache(maxsize=64)
def bilinear_matrix(n: int) -> np.ndarray:
    """2n x n interpolation matrix for x2 upsampling, half-pixel centres."""
    m = np.zeros((2 * n, n))
    for o in range(2 * n):
        src = min(max((o + 0.5) / 2.0 - 0.5, 0.0), n - 1.0)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.flags.writeable = False
    return m


def upsample_bilinear2x(x: Operand) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    _check_chw(xd, "upsample_bilinear2x")
    uh = bilinear_matrix(xd.shape[1])
    uw = bilinear_matrix(xd.shape[2])
    out = np.matmul(np.matmul(uh, xd), uw.T)

    def back(g: np.ndarray) -> Grads:
        return (np.matmul(np.matmul(uh.T, g), uw),)

    return Tensor._wrap(out, (x,), back)
