"""Reverse-mode automatic differentiation over dense float64 arrays.

Deliberately small: exactly the operations needed to train a 1-D
convolutional denoiser and to differentiate physics residuals. Tensors are
dense 1-D/2-D/3-D float64 arrays; binary operations require equal shapes or
a 0-d scalar operand (no general broadcasting). Gradients are computed by
walking an explicit tape of recorded operations in reverse.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "GradientMap",
    "NumericalError",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sqrt",
    "relu",
    "reduce_sum",
    "reduce_mean",
    "narrow",
    "concat",
    "prefix_sum_exclusive",
    "exclusive_prefix_sum_values",
    "conv1d",
    "mse",
    "AdamState",
    "adam_step",
]


class NumericalError(RuntimeError):
    """A computation produced non-finite values or failed a numeric check."""


_tensor_ids = itertools.count()


class Tensor:
    """A dense float64 array plus the bookkeeping needed for backprop.

    ``requires_grad`` marks leaves the caller wants gradients for; it
    propagates to results of operations so the tape can prune dead branches.
    """

    __slots__ = ("data", "requires_grad", "tid")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 3:
            raise ValueError(f"Tensor supports at most 3 dims, got {self.data.ndim}")
        self.requires_grad = bool(requires_grad)
        self.tid = next(_tensor_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; accepts Tensor or plain scalars.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class Node:
    """One recorded operation: inputs, output, and its vector-Jacobian rule."""

    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 vjp: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations; every node's inputs precede it.

    Use as a context manager; operations executed inside record themselves
    when any input requires a gradient. Creation order is evaluation order,
    so the node list is always topologically sorted.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(Node(op, inputs, out, vjp))
    return out


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo the implicit scalar broadcast of a 0-d operand.
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


class GradientMap:
    """Gradients keyed by tensor; unreached tensors read as zeros."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.tid)
        return np.zeros_like(t.data) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return t.tid in self._grads


def backward(loss: Tensor, tape: Tape) -> GradientMap:
    """Accumulate d(loss)/d(tensor) for everything reachable on the tape.

    Pure in the tape: calling twice returns identical gradients. The loss
    must be a scalar (0-d) tensor.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {loss.tid: np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.get(node.output.tid)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None:
                continue
            acc = grads.get(inp.tid)
            grads[inp.tid] = np.asarray(gi, dtype=np.float64) if acc is None else acc + gi
    return GradientMap(grads)


# ---------------------------------------------------------------------------
# Elementwise operations


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b)

    def vjp(g):
        ga = _reduce_to(g, a.data.shape) if a.requires_grad else None
        gb = _reduce_to(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record("add", (a, b), a.data + b.data, vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b)

    def vjp(g):
        ga = _reduce_to(g, a.data.shape) if a.requires_grad else None
        gb = _reduce_to(-g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record("sub", (a, b), a.data - b.data, vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _reduce_to(g * bd, ad.shape) if a.requires_grad else None
        gb = _reduce_to(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record("mul", (a, b), ad * bd, vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = _reduce_to(g / bd, ad.shape) if a.requires_grad else None
        gb = _reduce_to(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record("div", (a, b), out, vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return (-g if a.requires_grad else None,)

    return _record("neg", (a,), -a.data, vjp)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out) if a.requires_grad else None,)

    return _record("sqrt", (a,), out, vjp)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask if a.requires_grad else None,)

    return _record("relu", (a,), np.where(mask, a.data, 0.0), vjp)


# ---------------------------------------------------------------------------
# Reductions and structural operations


def reduce_sum(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape

    def vjp(g):
        return (np.full(shape, float(g)) if a.requires_grad else None,)

    return _record("reduce_sum", (a,), np.asarray(a.data.sum()), vjp)


def reduce_mean(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape
    n = a.data.size

    def vjp(g):
        return (np.full(shape, float(g) / n) if a.requires_grad else None,)

    return _record("reduce_mean", (a,), np.asarray(a.data.mean()), vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along one axis."""
    a = _as_tensor(a)
    nd = a.data.ndim
    if not 0 <= axis < nd:
        raise ValueError(f"narrow: axis {axis} out of range for {nd}-d tensor")
    dim = a.data.shape[axis]
    if length < 1 or start < 0 or start + length > dim:
        raise ValueError(f"narrow: slice [{start}, {start + length}) outside dim {dim}")
    idx = tuple(slice(start, start + length) if i == axis else slice(None) for i in range(nd))
    shape = a.data.shape

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        ga = np.zeros(shape)
        ga[idx] = g
        return (ga,)

    return _record("narrow", (a,), a.data[idx].copy(), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors of matching shapes along one axis."""
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ValueError("concat: need at least one tensor")
    nd = parts[0].data.ndim
    if not 0 <= axis < nd:
        raise ValueError(f"concat: axis {axis} out of range for {nd}-d tensor")
    for p in parts[1:]:
        if p.data.ndim != nd or any(
            p.data.shape[i] != parts[0].data.shape[i] for i in range(nd) if i != axis
        ):
            raise ValueError(
                f"concat: incompatible shapes {parts[0].data.shape} vs {p.data.shape}"
            )
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        out = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = tuple(slice(lo, hi) if i == axis else slice(None) for i in range(nd))
                out.append(g[idx])
            else:
                out.append(None)
        return tuple(out)

    return _record("concat", parts, np.concatenate([p.data for p in parts], axis=axis), vjp)


def exclusive_prefix_sum_values(x: np.ndarray) -> np.ndarray:
    """out[..., t] = sum of x[..., s] for s < t, accumulated left to right.

    Shared by the differentiable op below and the simulators, so that data
    constructed to satisfy a balance equation cancels it bitwise.
    """
    out = np.zeros_like(x)
    out[..., 1:] = np.cumsum(x[..., :-1], axis=-1)
    return out


def prefix_sum_exclusive(a) -> Tensor:
    """Differentiable exclusive prefix sum along the last axis."""
    a = _as_tensor(a)
    if a.data.ndim < 1:
        raise ValueError("prefix_sum_exclusive: needs at least 1 dim")

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        # d out[t] / d a[s] = 1 for t > s: reversed exclusive cumulative sum.
        rev = np.cumsum(g[..., ::-1], axis=-1)[..., ::-1]
        return (rev - g,)

    return _record("prefix_sum_exclusive", (a,), exclusive_prefix_sum_values(a.data), vjp)


# ---------------------------------------------------------------------------
# Convolution and losses


def conv1d(x, weight, bias) -> Tensor:
    """Same-length 1-D convolution over a Cin x T input.

    out[o, t] = bias[o] + sum_{i,k} weight[o, i, k] * padded[i, t + k]
    with (K-1)/2 zeros of padding on each side; K must be odd.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 3 or bias.data.ndim != 1:
        raise ValueError(
            f"conv1d: expected 2-d input, 3-d weight, 1-d bias; got "
            f"{x.data.ndim}-d, {weight.data.ndim}-d, {bias.data.ndim}-d"
        )
    cout, cin, k = weight.data.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d: kernel size must be odd, got {k}")
    if x.data.shape[0] != cin:
        raise ValueError(f"conv1d: input has {x.data.shape[0]} channels, weight expects {cin}")
    if bias.data.shape[0] != cout:
        raise ValueError(f"conv1d: bias has {bias.data.shape[0]} entries, weight expects {cout}")
    t_len = x.data.shape[1]
    pad = (k - 1) // 2
    xpad = np.zeros((cin, t_len + k - 1))
    xpad[:, pad:pad + t_len] = x.data
    win = np.lib.stride_tricks.sliding_window_view(xpad, k, axis=1)  # cin x T x k
    # im2col so both passes run as BLAS matmuls: col[i*k + j, t] = xpad[i, t + j]
    col = win.transpose(0, 2, 1).reshape(cin * k, t_len)
    w2d = weight.data.reshape(cout, cin * k)
    out = w2d @ col + bias.data[:, None]

    def vjp(g):
        gx = gw = gb = None
        if bias.requires_grad:
            gb = g.sum(axis=1)
        if weight.requires_grad:
            gw = (g @ col.T).reshape(cout, cin, k)
        if x.requires_grad:
            gcol = (w2d.T @ g).reshape(cin, k, t_len)
            gxpad = np.zeros((cin, t_len + k - 1))
            for j in range(k):
                gxpad[:, j:j + t_len] += gcol[:, j, :]
            gx = gxpad[:, pad:pad + t_len]
        return gx, gw, gb

    return _record("conv1d", (x, weight, bias), out, vjp)


def mse(a, b) -> Tensor:
    """Mean over all elements of (a - b) squared."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse: shape mismatch {a.data.shape} vs {b.data.shape}")
    d = sub(a, b)
    return reduce_mean(mul(d, d))


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: GradientMap,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    if len(state.m) != len(params):
        raise ValueError("adam_step: state does not match parameter list")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for i, p in enumerate(params):
        g = grads[p]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {i} at step {state.t}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return state
