"""NCHW tensors, zero-padded 2-D convolution and a reverse-mode tape.

Ops are pure functions over :class:`Tensor` values.  When a :class:`Tape` is
active and an op touches a tracked tensor (a leaf with ``requires_grad`` or
anything produced on the tape), the op appends a node holding its inputs and
a backward rule.  ``Tape.gradient`` then walks the nodes in reverse and sums
every contribution, so a kernel reused across K recursions receives exactly
K gradient terms.

Convolution follows the deep-learning convention: cross-correlation, no
kernel flip, symmetric zero padding of ``(s - 1) // 2`` so spatial size is
preserved.
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GradientError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "conv2d",
    "relu",
    "add",
    "sub",
    "mul",
    "scale",
    "mse",
    "correlate_reference",
]


class Tensor:
    """Immutable n-d array value (4-D NCHW for images and kernels)."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)


def _wrap(arr: np.ndarray) -> Tensor:
    # avoids the defensive copy in Tensor.__init__ for freshly computed arrays
    t = Tensor.__new__(Tensor)
    arr.flags.writeable = False
    t.data = arr
    t.requires_grad = False
    t.name = None
    return t


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

_local = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("out", "inputs", "backward", "tag")

    def __init__(self, out, inputs, backward, tag):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.tag = tag


class Tape:
    """Single-owner record of differentiable ops, used as a context manager.

    >>> w = Tensor([[[[2.0]]]], requires_grad=True)
    >>> x = Tensor([[[[3.0]]]])
    >>> with Tape() as tape:
    ...     loss = mse(mul(w, x), Tensor([[[[0.0]]]]))
    >>> tape.gradient(loss, [w])[0].ravel().tolist()
    [36.0]
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable, tag: str) -> None:
        self.nodes.append(_Node(out, tuple(inputs), backward, tag))
        self._produced[id(out)] = out

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of the scalar ``loss`` with respect to each source tensor.

        A source used several times gets the sum of all its contributions.
        Sources that are tracked but never reached get a zero gradient.
        """
        if loss.size != 1:
            raise GradientError(f"loss must be a scalar, got shape {loss.shape}")
        if id(loss) not in self._produced and not loss.requires_grad:
            raise GradientError("loss was not produced on this tape")
        for s in sources:
            if not self.tracks(s):
                raise GradientError(f"tensor {s!r} is detached from the tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.out), None)
            if g_out is None:
                continue
            # keep sources' own accumulated gradient if they are also node outputs
            if any(node.out is s for s in sources):
                grads[id(node.out)] = g_out
            in_grads = node.backward(g_out)
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not self.tracks(inp):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(np.zeros(s.shape, dtype=s.dtype) if g is None else g.astype(s.dtype, copy=False))
        return out


def _emit(result: np.ndarray, inputs: Sequence[Tensor], backward: Callable, tag: str) -> Tensor:
    out = _wrap(result)
    tape = _active_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape.record(out, inputs, backward, tag)
    return out


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    for big, small in ((a, b), (b, a)):
        if (
            big.data.ndim == 4
            and small.data.ndim == 4
            and small.shape == (1, big.shape[1], 1, 1)
        ):
            return
    raise ShapeError(
        f"{op}: shapes {a.shape} and {b.shape} disagree "
        "(only exact match or a (1, c, 1, 1) per-channel vector is allowed)"
    )


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=(0, 2, 3), keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _emit(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = a.dtype.type(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.maximum(x.data, 0)
    mask = x.data > 0
    return _emit(y, (x,), lambda g: (g * mask,), "relu")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences, reduced in 64-bit regardless of input dtype."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} disagree")
    if a.size == 0:
        raise ShapeError("mse of empty tensors is undefined")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    n = diff.size
    value = np.array(np.mean(diff * diff), dtype=np.float64)

    def backward(g):
        ga = (2.0 / n) * diff * g
        return ga.astype(a.dtype), (-ga).astype(b.dtype)

    return _emit(value, (a, b), backward, "mse")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _check_conv(x: np.ndarray, k: np.ndarray) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be NCHW, got {x.ndim}-D shape {x.shape}")
    if k.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (out, in, s, s), got shape {k.shape}")
    if k.shape[2] != k.shape[3] or k.shape[2] % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd-sized, got {k.shape[2]}x{k.shape[3]}")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(
            f"conv2d: input channels {x.shape[1]} != kernel in_channels {k.shape[1]}"
        )


def _pad_nhwc(x: np.ndarray, p: int) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
    xp[:, p : p + h, p : p + w, :] = x.transpose(0, 2, 3, 1)
    return xp


def _shifts(x: np.ndarray, s: int):
    """Yield (di, dj, (n*h*w, c) matrix of the input shifted by that tap)."""
    n, c, h, w = x.shape
    xp = _pad_nhwc(x, s // 2)
    for di in range(s):
        for dj in range(s):
            yield di, dj, np.ascontiguousarray(xp[:, di : di + h, dj : dj + w, :]).reshape(n * h * w, c)


def _correlate(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # accumulate one (n*h*w, c) @ (c, o) product per kernel tap
    n, c, h, w = x.shape
    o, _, s, _ = k.shape
    out = np.zeros((n * h * w, o), dtype=np.result_type(x, k))
    taps = np.ascontiguousarray(k.transpose(2, 3, 1, 0))  # s, s, c, o; BLAS needs contiguous operands
    for di, dj, xs in _shifts(x, s):
        out += xs @ taps[di, dj]
    return np.ascontiguousarray(out.reshape(n, h, w, o).transpose(0, 3, 1, 2))


def _kernel_grad(x: np.ndarray, g: np.ndarray, s: int) -> np.ndarray:
    n, c, h, w = x.shape
    o = g.shape[1]
    g_flat_t = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * h * w)
    gk = np.empty((o, c, s, s), dtype=np.result_type(x, g))
    for di, dj, xs in _shifts(x, s):
        gk[:, :, di, dj] = g_flat_t @ xs
    return gk


def conv2d(x: Tensor, k: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Same-size 2-D cross-correlation of ``x`` (n, c, h, w) with ``k`` (o, c, s, s).

    ``bias``, when given, is a length-``o`` vector added per output channel.
    """
    x, k = _as_tensor(x), _as_tensor(k)
    _check_conv(x.data, k.data)
    dtype = np.result_type(x.dtype, k.dtype)
    xd = x.data.astype(dtype, copy=False)
    kd = k.data.astype(dtype, copy=False)
    out = _correlate(xd, kd)
    inputs: tuple = (x, k)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (k.shape[0],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({k.shape[0]},)")
        out += bias.data.astype(dtype).reshape(1, -1, 1, 1)
        inputs = (x, k, bias)
    s = k.shape[2]

    def backward(g):
        # adjoint of same-padded correlation: correlate with the flipped, transposed kernel
        gx = _correlate(g, np.ascontiguousarray(kd.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]))
        gk = _kernel_grad(xd, g, s)
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return _emit(out, inputs, backward, "conv2d")


def correlate_reference(x: np.ndarray, k: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Direct six-loop zero-padded cross-correlation. Slow; used as an oracle."""
    n, c, h, w = x.shape
    o, _, s, _ = k.shape
    p = s // 2
    out = np.zeros((n, o, h, w), dtype=np.float64)
    for b in range(n):
        for oc in range(o):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for ic in range(c):
                        for di in range(s):
                            for dj in range(s):
                                yi, xj = i + di - p, j + dj - p
                                if 0 <= yi < h and 0 <= xj < w:
                                    acc += x[b, ic, yi, xj] * k[oc, ic, di, dj]
                    out[b, oc, i, j] = acc + (0.0 if bias is None else bias[oc])
    return out
