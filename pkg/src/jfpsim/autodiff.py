"""Reverse-mode automatic differentiation over dense float64 arrays.

Tape-based engine in the micrograd style: every differentiable operation
records its parents and a backward closure on the output tensor, and
``Tensor.backward()`` walks the recorded graph in reverse topological
order. Arrays are always float64; complex quantities are handled one
level up as (real, imag) tensor pairs (see :mod:`jfpsim.clinalg`).

Only first-order gradients, CPU, static shapes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ContractError",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "split",
    "repeat",
    "tsum",
    "tmean",
    "relu",
    "log",
    "exp",
    "sqrt",
    "square",
    "softmax",
    "conv2d",
    "as_tensor",
]


class ShapeError(ValueError):
    """Operand shapes are not conformable for the requested operation."""


class ContractError(RuntimeError):
    """An engine contract was violated (non-scalar backward, reused tape, ...)."""


def _shape_error(op: str, *shapes) -> ShapeError:
    joined = " vs ".join(str(tuple(int(d) for d in s)) for s in shapes)
    return ShapeError(f"{op}: non-conformable shapes {joined}")


def _check_broadcast(op: str, sa, sb):
    # numpy broadcasting rule, right-aligned
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise _shape_error(op, sa, sb)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense float64 tensor, optionally tracked on the autodiff tape.

    `grad` is populated (same shape as `data`) after a `backward()` pass
    that reaches this tensor; it accumulates across ops within one pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor data must be finite; got NaN/Inf in input")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._done = False

    @classmethod
    def _result(cls, data: np.ndarray, parents, backward) -> "Tensor":
        # internal fast path: no finite check, no copy
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out._done = False
        tracked = tuple(p for p in parents if p._tracked())
        if tracked:
            out._parents = tracked
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _tracked(self) -> bool:
        return self.requires_grad or self._backward is not None

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, tracked={self._tracked()})"

    def _acc_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- reverse pass ----------------------------------------------------
    def backward(self):
        """Backpropagate from this scalar through the recorded tape.

        Populates `grad` on every tracked tensor that contributed to this
        value. A second call on the same tensor is rejected: rebuild the
        graph (a fresh forward pass) before differentiating again.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        if self._done:
            raise ContractError("backward() already ran on this tensor; rebuild the graph to differentiate again")
        # iterative topological sort (graphs can be deep)
        topo = []
        visited = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        self._done = True

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.shape, b.shape)
    out = Tensor._result(a.data + b.data, (a, b), None)

    def backward(g):
        if a._tracked():
            a._acc_grad(_unbroadcast(g, a.shape))
        if b._tracked():
            b._acc_grad(_unbroadcast(g, b.shape))

    if out._parents:
        out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.shape, b.shape)
    out = Tensor._result(a.data - b.data, (a, b), None)

    def backward(g):
        if a._tracked():
            a._acc_grad(_unbroadcast(g, a.shape))
        if b._tracked():
            b._acc_grad(_unbroadcast(-g, b.shape))

    if out._parents:
        out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.shape, b.shape)
    out = Tensor._result(a.data * b.data, (a, b), None)

    def backward(g):
        if a._tracked():
            a._acc_grad(_unbroadcast(g * b.data, a.shape))
        if b._tracked():
            b._acc_grad(_unbroadcast(g * a.data, b.shape))

    if out._parents:
        out._backward = backward
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.shape, b.shape)
    out = Tensor._result(a.data / b.data, (a, b), None)

    def backward(g):
        if a._tracked():
            a._acc_grad(_unbroadcast(g / b.data, a.shape))
        if b._tracked():
            b._acc_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    if out._parents:
        out._backward = backward
    return out


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise _shape_error("matmul (operands must be >= 2-D)", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    _check_broadcast("matmul (batch dims)", a.shape[:-2], b.shape[:-2])
    out = Tensor._result(a.data @ b.data, (a, b), None)

    def backward(g):
        if a._tracked():
            a._acc_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b._tracked():
            b._acc_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    if out._parents:
        out._backward = backward
    return out


# -- shape manipulation -------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor._result(a.data.reshape(shape), (a,), None)

    def backward(g):
        a._acc_grad(g.reshape(a.shape))

    if out._parents:
        out._backward = backward
    return out


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = Tensor._result(np.transpose(a.data, axes), (a,), None)

    def backward(g):
        a._acc_grad(np.transpose(g, inv))

    if out._parents:
        out._backward = backward
    return out


def getitem(a, key) -> Tensor:
    """Basic indexing (ints/slices/Ellipsis); no advanced index arrays."""
    a = as_tensor(a)
    out = Tensor._result(a.data[key], (a,), None)

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        a._acc_grad(full)

    if out._parents:
        out._backward = backward
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != (axis % len(base)) and other[i] != base[i] for i in range(len(base))
        ):
            raise _shape_error("concat", tensors[0].shape, t.shape)
    out = Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t._tracked():
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                t._acc_grad(g[tuple(idx)])

    if out._parents:
        out._backward = backward
    return out


def split(a, sections: int, axis: int):
    """Split into `sections` equal parts along `axis`."""
    a = as_tensor(a)
    if a.shape[axis] % sections:
        raise _shape_error(f"split into {sections} along axis {axis}", a.shape)
    step = a.shape[axis] // sections
    outs = []
    for i in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        outs.append(getitem(a, tuple(idx)))
    return outs


def repeat(a, repeats: int, axis: int) -> Tensor:
    """Uniform repeat along one axis (each entry duplicated `repeats` times)."""
    a = as_tensor(a)
    out = Tensor._result(np.repeat(a.data, repeats, axis=axis), (a,), None)
    ax = axis % a.ndim

    def backward(g):
        shp = list(a.shape)
        shp.insert(ax + 1, repeats)
        a._acc_grad(g.reshape(shp).sum(axis=ax + 1))

    if out._parents:
        out._backward = backward
    return out


# -- reductions ----------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._acc_grad(np.broadcast_to(g, a.shape))

    if out._parents:
        out._backward = backward
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[i] for i in axis]))
    else:
        count = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- nonlinearities --------------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._result(np.maximum(a.data, 0.0), (a,), None)

    def backward(g):
        a._acc_grad(g * (a.data > 0))

    if out._parents:
        out._backward = backward
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._result(np.log(a.data), (a,), None)

    def backward(g):
        a._acc_grad(g / a.data)

    if out._parents:
        out._backward = backward
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    out = Tensor._result(out_data, (a,), None)

    def backward(g):
        a._acc_grad(g * out_data)

    if out._parents:
        out._backward = backward
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    out = Tensor._result(out_data, (a,), None)

    def backward(g):
        a._acc_grad(g * 0.5 / out_data)

    if out._parents:
        out._backward = backward
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._result(a.data * a.data, (a,), None)

    def backward(g):
        a._acc_grad(g * 2.0 * a.data)

    if out._parents:
        out._backward = backward
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`; rows sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._result(s, (a,), None)

    def backward(g):
        gs = g * s
        a._acc_grad(gs - s * gs.sum(axis=axis, keepdims=True))

    if out._parents:
        out._backward = backward
    return out


# -- 2-D convolution ---------------------------------------------------------------

def conv2d(x, w, b=None, padding: int = 1) -> Tensor:
    """2-D cross-correlation, NCHW layout, stride 1, symmetric zero padding.

    x: (N, C_in, H, W); w: (C_out, C_in, KH, KW); b: (C_out,) or None.
    Output spatial size is H + 2*padding - KH + 1 (same-size for odd
    kernels with padding = K // 2).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise _shape_error("conv2d (need NCHW input and OIHW kernel)", x.shape, w.shape)
    if x.shape[1] != w.shape[1]:
        raise _shape_error("conv2d (channel mismatch)", x.shape, w.shape)
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    p = int(padding)
    oh, ow = h + 2 * p - kh + 1, wd + 2 * p - kw + 1
    if oh <= 0 or ow <= 0:
        raise _shape_error("conv2d (kernel larger than padded input)", x.shape, w.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    out_data = np.zeros((n, c_out, oh, ow))
    for i in range(kh):
        for j in range(kw):
            # (N,C,OH,OW) x (O,C) summed over C
            out_data += np.tensordot(xp[:, :, i : i + oh, j : j + ow], w.data[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data.reshape(1, c_out, 1, 1)
        parents = (x, w, b)
    else:
        parents = (x, w)
    out = Tensor._result(out_data, parents, None)

    def backward(g):
        if b is not None and b._tracked():
            b._acc_grad(g.sum(axis=(0, 2, 3)))
        if w._tracked():
            gw = np.zeros_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    # sum over N, OH, OW
                    gw[:, :, i, j] = np.tensordot(g, xp[:, :, i : i + oh, j : j + ow], axes=([0, 2, 3], [0, 2, 3]))
            w._acc_grad(gw)
        if x._tracked():
            gxp = np.zeros((n, c_in, h + 2 * p, wd + 2 * p))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + oh, j : j + ow] += np.tensordot(g, w.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            x._acc_grad(gxp[:, :, p : p + h, p : p + wd] if p else gxp)

    if out._parents:
        out._backward = backward
    return out
