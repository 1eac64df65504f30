"""Dense tensors with reverse-mode automatic differentiation.

Only the operations the separation network needs are implemented:
valid 1D convolution, stride-2 decimation, linear-interpolation
upsampling, center-crop + channel concat, a handful of pointwise ops,
and an MSE loss. Each op records its parents and a backward rule;
``Tensor.backward()`` walks the graph in reverse topological order.

Gradients accumulate into ``.grad`` until an explicit ``zero_grad()``,
so repeated backward passes sum, and a training loop must clear grads
every step. All math is done in the dtype of the inputs (float64 by
default, float32 supported for faster training).

Convolution uses the cross-correlation convention (no kernel flip),
matching the usual deep-learning definition. Spectral code elsewhere in
the package must not assume flipped kernels.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

DEFAULT_DTYPE = np.float64
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """N-dimensional array plus an optional gradient buffer.

    Leaves created with ``requires_grad=True`` get a zero-filled ``grad``
    of the same shape at construction, so after ``backward()`` the
    gradient of every reachable leaf is fully populated and the gradient
    of an unreachable leaf reads as zero.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: tuple = (),
        _backward: Optional[Callable] = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        """Populate ``grad`` of every reachable tensor with d(self)/d(tensor).

        ``self`` must be scalar. Contributions are first collected in
        per-call buffers and only added to ``.grad`` at the end, so calling
        backward twice accumulates exactly twice the gradient.
        """
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        buffers: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = buffers.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, contrib in zip(node._parents, node._backward(g)):
                if contrib is None or not parent.requires_grad:
                    continue
                held = buffers.get(id(parent))
                buffers[id(parent)] = contrib if held is None else held + contrib
        for node in topo:
            if node.requires_grad:
                g = buffers.get(id(node))
                if g is not None:
                    node.grad += g


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _check_2d(x: Tensor, what: str) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"{what} must be 2-D [channels, length], got shape {x.shape}")


def conv1d_valid(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid (no padding) 1D cross-correlation.

    x: [C_in, L], kernels: [C_out, C_in, k], bias: [C_out].
    out[o, t] = bias[o] + sum_{i,j} x[i, t+j] * kernels[o, i, j],
    length L - k + 1.
    """
    _check_2d(x, "conv input")
    if kernels.data.ndim != 3:
        raise ShapeError(f"kernels must be 3-D [C_out, C_in, k], got shape {kernels.shape}")
    if bias.data.ndim != 1:
        raise ShapeError(f"bias must be 1-D [C_out], got shape {bias.shape}")
    c_in, length = x.shape
    c_out, kc_in, k = kernels.shape
    if kc_in != c_in:
        raise ShapeError(f"kernel expects {kc_in} input channels, input has {c_in}")
    if bias.shape[0] != c_out:
        raise ShapeError(f"bias has {bias.shape[0]} entries for {c_out} output channels")
    if length < k:
        raise ShapeError("input shorter than kernel")

    t_out = length - k + 1
    # im2col: colmat[i*k + j, t] = x[i, t+j], then one GEMM.
    cols = sliding_window_view(x.data, k, axis=1)  # [C_in, T, k] view
    colmat = np.ascontiguousarray(cols.transpose(0, 2, 1)).reshape(c_in * k, t_out)
    out = kernels.data.reshape(c_out, c_in * k) @ colmat
    out += bias.data[:, None]

    requires = _needs_grad(x, kernels, bias)
    if not requires:
        return Tensor(out)

    kdata = kernels.data

    def backward(g: np.ndarray):
        gx = gk = gb = None
        if bias.requires_grad:
            gb = g.sum(axis=1)
        if kernels.requires_grad:
            gk = (g @ colmat.T).reshape(c_out, c_in, k)
        if x.requires_grad:
            # dL/dx is a full correlation of the output grad with flipped kernels.
            gpad = np.pad(g, ((0, 0), (k - 1, k - 1)))
            gw = sliding_window_view(gpad, k, axis=1)  # [C_out, L, k]
            kflip = kdata[:, :, ::-1]
            lhs = np.ascontiguousarray(kflip.transpose(1, 0, 2)).reshape(c_in, c_out * k)
            rhs = np.ascontiguousarray(gw.transpose(0, 2, 1)).reshape(c_out * k, length)
            gx = lhs @ rhs
        return gx, gk, gb

    return Tensor(out, requires_grad=True, _parents=(x, kernels, bias), _backward=backward)


def decimate2(x: Tensor) -> Tensor:
    """Keep every second sample starting at index 0: [C, L] -> [C, ceil(L/2)]."""
    _check_2d(x, "decimate input")
    if x.shape[1] < 1:
        raise ShapeError("decimate2 requires a non-empty input")
    out = x.data[:, ::2].copy()

    if not x.requires_grad:
        return Tensor(out)

    in_shape = x.shape

    def backward(g: np.ndarray):
        gx = np.zeros(in_shape, dtype=g.dtype)
        gx[:, ::2] = g
        return (gx,)

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=backward)


def lininterp_upsample2(x: Tensor) -> Tensor:
    """Linear-interpolation upsampling: [C, L] -> [C, 2L-1].

    Even outputs copy the input, odd outputs are midpoints of neighbours.
    """
    _check_2d(x, "upsample input")
    channels, length = x.shape
    if length < 2:
        raise ShapeError("lininterp_upsample2 requires length >= 2")
    out = np.empty((channels, 2 * length - 1), dtype=x.dtype)
    out[:, ::2] = x.data
    out[:, 1::2] = 0.5 * (x.data[:, :-1] + x.data[:, 1:])

    if not x.requires_grad:
        return Tensor(out)

    def backward(g: np.ndarray):
        gx = g[:, ::2].copy()
        half = 0.5 * g[:, 1::2]
        gx[:, :-1] += half
        gx[:, 1:] += half
        return (gx,)

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=backward)


def crop_concat(skip: Tensor, up: Tensor) -> Tensor:
    """Center-crop ``skip`` to the length of ``up`` and stack channels.

    The length difference must be even; an odd difference means the
    surrounding network was mis-sized, so it is an error rather than an
    asymmetric crop.
    """
    _check_2d(skip, "skip input")
    _check_2d(up, "upsampled input")
    c1, l1 = skip.shape
    c2, l2 = up.shape
    if l1 < l2:
        raise ShapeError(f"skip length {l1} shorter than upsampled length {l2}")
    if (l1 - l2) % 2 != 0:
        raise ShapeError(f"odd crop difference {l1 - l2}: network is mis-sized")
    lo = (l1 - l2) // 2
    out = np.concatenate([skip.data[:, lo:lo + l2], up.data], axis=0)

    if not _needs_grad(skip, up):
        return Tensor(out)

    def backward(g: np.ndarray):
        gs = gu = None
        if skip.requires_grad:
            gs = np.zeros((c1, l1), dtype=g.dtype)
            gs[:, lo:lo + l2] = g[:c1]
        if up.requires_grad:
            gu = g[c1:]
        return gs, gu

    return Tensor(out, requires_grad=True, _parents=(skip, up), _backward=backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    out = np.where(x.data >= 0, x.data, x.dtype.type(slope) * x.data)
    if not x.requires_grad:
        return Tensor(out)
    mask = np.where(x.data >= 0, x.dtype.type(1.0), x.dtype.type(slope))

    def backward(g: np.ndarray):
        return (g * mask,)

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    if not x.requires_grad:
        return Tensor(out)

    def backward(g: np.ndarray):
        return (g * (1.0 - out * out),)

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    if not x.requires_grad:
        return Tensor(out)

    def backward(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=backward)


def _broadcast_pair(a: Tensor, b: Tensor, opname: str):
    """Allow equal shapes, or a [C, 1] factor against [C, L]. Returns the
    axis to reduce for each side (None when no reduction is needed)."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return None, None
    if len(sa) == 2 and len(sb) == 2 and sa[0] == sb[0]:
        if sa[1] == 1 and sb[1] > 1:
            return 1, None
        if sb[1] == 1 and sa[1] > 1:
            return None, 1
    raise ShapeError(f"{opname}: shapes {sa} and {sb} are not broadcastable")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one side may be [C, 1] against [C, L]."""
    red_a, red_b = _broadcast_pair(a, b, "mul")
    out = a.data * b.data
    if not _needs_grad(a, b):
        return Tensor(out)

    def backward(g: np.ndarray):
        ga = gb = None
        if a.requires_grad:
            ga = g * b.data
            if red_a is not None:
                ga = ga.sum(axis=red_a, keepdims=True)
        if b.requires_grad:
            gb = g * a.data
            if red_b is not None:
                gb = gb.sum(axis=red_b, keepdims=True)
        return ga, gb

    return Tensor(out, requires_grad=True, _parents=(a, b), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; one side may be [C, 1] against [C, L]."""
    red_a, red_b = _broadcast_pair(a, b, "add")
    out = a.data + b.data
    if not _needs_grad(a, b):
        return Tensor(out)

    def backward(g: np.ndarray):
        ga = gb = None
        if a.requires_grad:
            ga = g.sum(axis=red_a, keepdims=True) if red_a is not None else g
        if b.requires_grad:
            gb = g.sum(axis=red_b, keepdims=True) if red_b is not None else g
        return ga, gb

    return Tensor(out, requires_grad=True, _parents=(a, b), _backward=backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference; scalar output."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)
    if not _needs_grad(pred, target):
        return Tensor(out)

    def backward(g: np.ndarray):
        scale = g.reshape(()) * 2.0 / n
        gp = scale * diff if pred.requires_grad else None
        gt = -scale * diff if target.requires_grad else None
        return gp, gt

    return Tensor(out, requires_grad=True, _parents=(pred, target), _backward=backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python constant (used for batch averaging)."""
    out = x.data * x.dtype.type(factor)
    if not x.requires_grad:
        return Tensor(out)

    def backward(g: np.ndarray):
        return (g * x.dtype.type(factor),)

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=backward)


def zero_grads(params: Sequence[Tensor] | dict) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.zero_grad()
