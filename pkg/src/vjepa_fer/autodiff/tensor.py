"""Dense tensors with a reverse-mode differentiation record.

A :class:`Tensor` wraps a numpy array. Every primitive in this module that
sees at least one input with ``requires_grad=True`` (while gradient recording
is enabled) attaches a :class:`Node` to its output; :func:`backward` orders
the reachable nodes into a :class:`Tape` and replays it in reverse.

There is no implicit broadcasting: elementwise primitives demand identical
shapes. ``linear`` is the one primitive that applies a bias across rows, and
``expand_rows`` is the explicit way to replicate a row.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from vjepa_fer.errors import ConfigError, DimensionError, ProtocolError, UsageError

_state = threading.local()

_GELU_C = (2.0 / np.pi) ** 0.5


def _get(name: str, default):
    return getattr(_state, name, default)


def is_grad_enabled() -> bool:
    return _get("grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def get_default_dtype() -> np.dtype:
    return _get("default_dtype", np.dtype(np.float32))


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for new float tensors (thread-local)."""
    prev = get_default_dtype()
    _state.default_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.default_dtype = prev


@dataclass(eq=False)
class Node:
    """One recorded primitive: its inputs and a closure mapping dL/dout to dL/dinputs."""

    op: str
    inputs: tuple["Tensor", ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    output: "Tensor | None" = field(default=None, repr=False)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not (isinstance(data, (np.ndarray, np.generic)) and arr.dtype in (np.float32, np.float64)):
            # python scalars/lists, ints and odd float widths take the default dtype
            arr = arr.astype(get_default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ------------------------------------------------------
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        return sum_all(self)


def _raise_item(shape):
    raise DimensionError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    track = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        node = Node(op, inputs, backward_fn)
        node.output = out
        out._node = node
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Tape and backward
# ---------------------------------------------------------------------------


class Tape:
    """Recorded operations reachable from one output, producers before consumers."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Node] = []
        seen: set[int] = set()
        if out._node is None:
            return cls(order)
        # iterative post-order DFS; child visiting order is fixed by input position
        stack: list[tuple[Node, int]] = [(out._node, 0)]
        seen.add(id(out._node))
        while stack:
            node, i = stack.pop()
            if i < len(node.inputs):
                stack.append((node, i + 1))
                child = node.inputs[i]._node
                if child is not None and id(child) not in seen:
                    seen.add(id(child))
                    stack.append((child, 0))
            else:
                order.append(node)
        return cls(order)

    def run_backward(self, out: Tensor, seed: np.ndarray) -> int:
        """Propagate ``seed`` (dL/dout) to every leaf; returns the number of nodes visited."""
        grads: dict[int, np.ndarray] = {id(out): seed}
        visited = 0
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            visited += 1
            if g_out is None:
                continue
            g_inputs = node.backward_fn(g_out)
            for t, g in zip(node.inputs, g_inputs):
                if g is None or not t.requires_grad:
                    continue
                if g.shape != t.shape:
                    raise DimensionError(f"{node.op}: gradient shape {g.shape} != input shape {t.shape}")
                if t._node is None:
                    g = g.astype(t.dtype, copy=False)
                    t.grad = g.copy() if t.grad is None else t.grad + g
                else:
                    key = id(t)
                    grads[key] = g if key not in grads else grads[key] + g
        return visited


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every leaf with ``requires_grad`` reachable from ``loss``.

    Gradients accumulate additively into existing ``.grad`` arrays.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("backward called on a tensor that is not on the tape (detached or requires_grad=False)")
    seed = np.ones(loss.shape, dtype=loss.dtype)
    if loss._node is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return Tape([])
    tape = Tape.from_output(loss)
    tape.run_backward(loss, seed)
    return tape


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c_arr = a.data.dtype.type(c)
    return _make(a.data * c_arr, (a,), lambda g: (g * c_arr,), "scale")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    xd = x.data
    c = xd.dtype.type(_GELU_C)
    a = xd.dtype.type(0.044715)
    inner = c * (xd + a * xd * xd * xd)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def bw(g):
        dinner = c * (1.0 + 3.0 * a * xd * xd)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * dinner),)

    return _make(out, (x,), bw, "gelu")


def elementwise(op: str, *operands, constant: float | None = None) -> Tensor:
    """Dispatch by name: ``add``, ``sub``, ``mul``, ``scale`` (needs ``constant``) or ``gelu``."""
    if op == "add":
        return add(*operands)
    if op == "sub":
        return sub(*operands)
    if op == "mul":
        return mul(*operands)
    if op == "scale":
        if constant is None:
            raise ConfigError("scale needs a constant")
        return scale(operands[0], constant)
    if op == "gelu":
        return gelu(operands[0])
    raise ConfigError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    src = x.shape
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "permute")


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]`` along axis 0."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("take_rows expects a 1-D index")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError(f"take_rows: index out of range for {x.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), bw, "take_rows")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    tail = parts[0].shape[1:]
    for p in parts:
        if p.shape[1:] != tail:
            raise DimensionError(f"concat_rows: trailing shapes differ {p.shape} vs {parts[0].shape}")
    sizes = [p.shape[0] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts),
                 lambda g: tuple(np.split(g, cuts, axis=0)), "concat_rows")


def expand_rows(x: Tensor, n: int) -> Tensor:
    """Replicate a ``(1, D)`` row into ``(n, D)``."""
    if x.ndim != 2 or x.shape[0] != 1:
        raise DimensionError(f"expand_rows expects shape (1, D), got {x.shape}")
    return _make(np.repeat(x.data, n, axis=0), (x,), lambda g: (g.sum(axis=0, keepdims=True),), "expand_rows")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    # ravel + np.sum: fixed pairwise order over the row-major index
    out = np.sum(x.data.ravel()).reshape(())
    shape = x.shape
    return _make(out, (x,), lambda g: (np.full(shape, g, dtype=x.dtype),), "sum")


def mean_rows(x: Tensor) -> Tensor:
    """Mean over axis 0 of an ``(N, D)`` tensor, kept as ``(1, D)``."""
    if x.ndim != 2:
        raise DimensionError(f"mean_rows expects 2-D input, got {x.shape}")
    n = x.shape[0]
    out = x.data.mean(axis=0, keepdims=True)
    return _make(out, (x,), lambda g: (np.repeat(g / n, n, axis=0),), "mean_rows")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul ``(B, m, k) @ (B, k, n)``; batch extents must match exactly."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b),
                 lambda g: (g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g), "bmm")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape ``(N, in)``; bias is added to every row."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is None:
        return _make(out, (x, weight), lambda g: (g @ wd.T, xd.T @ g), "linear")
    out += bias.data
    return _make(out, (x, weight, bias), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)), "linear")


# ---------------------------------------------------------------------------
# Normalisation and probabilities
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gain, bias), bw, "layer_norm")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def l1_loss(pred: Tensor, target: Tensor, mask=None) -> Tensor:
    """Mean absolute difference over mask-selected elements.

    ``target`` is treated as a constant: no gradient is ever sent to it.
    """
    _same_shape("l1_loss", pred, target)
    if mask is None:
        m = np.ones(pred.shape, dtype=bool)
    else:
        m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
        if m.shape != pred.shape:
            raise DimensionError(f"l1_loss: mask shape {m.shape} != {pred.shape}")
    count = int(m.sum())
    if count == 0:
        raise ProtocolError("l1_loss: mask selects no elements")
    diff = pred.data - target.data
    out = (np.abs(diff[m]).sum() / count).astype(pred.dtype).reshape(())

    def bw(g):
        return (np.sign(diff) * m * (g / count)).astype(pred.dtype, copy=False), None

    return _make(out, (pred, target), bw, "l1_loss")


def cross_entropy(logits: Tensor, label) -> Tensor:
    """Negative log-softmax probability of ``label``.

    ``logits`` is ``(K,)`` with an int label, or ``(B, K)`` with ``B`` labels
    (the result is then the batch mean).
    """
    single = logits.ndim == 1
    z = logits.data.reshape(1, -1) if single else logits.data
    if z.ndim != 2:
        raise DimensionError(f"cross_entropy expects (K,) or (B, K) logits, got {logits.shape}")
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    b, k = z.shape
    if labels.shape != (b,):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {b} rows")
    if labels.min() < 0 or labels.max() >= k:
        raise IndexError(f"cross_entropy: label out of range [0, {k})")
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    rows = np.arange(b)
    out = (-logp[rows, labels].mean()).astype(logits.dtype).reshape(())

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        p *= g / b
        return (p.reshape(logits.shape).astype(logits.dtype, copy=False),)

    return _make(out, (logits,), bw, "cross_entropy")
