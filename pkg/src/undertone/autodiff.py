"""Reverse-mode automatic differentiation on a flat tape.

Everything is float64. Each op validates shapes and input finiteness,
computes the forward value eagerly and, when a Tape is supplied and any
input wants gradients, records a closure that maps the output gradient to
per-input gradients. ``backward`` replays the tape in reverse and
accumulates into ``Tensor.grad`` (repeated calls keep accumulating).

The op set is deliberately small: just what a batched attention/recurrent
classifier and its loss need. Broadcasting is supported for the
elementwise ops via gradient un-broadcasting; nothing fancier.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs do not conform; carries the op name and shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {self.shapes}")


class NonFiniteError(ValueError):
    """Raised when an op receives NaN or Inf input."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: non-finite input")


class Tensor:
    """A float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.data.shape)}, requires_grad={self.requires_grad}{tag})"


class Tape:
    """Ordered record of ops; inputs of every node precede it."""

    def __init__(self):
        self.nodes = []

    def record(self, inputs, output, backward_fn):
        self.nodes.append((inputs, output, backward_fn))

    def __len__(self):
        return len(self.nodes)


def _check_finite(op, *tensors):
    for t in tensors:
        if not np.isfinite(t.data).all():
            raise NonFiniteError(op)


def _wants_grad(tape, *tensors) -> bool:
    return tape is not None and any(t.requires_grad for t in tensors)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make_output(tape, op, inputs, value, backward_fn):
    out = Tensor(value)
    if _wants_grad(tape, *inputs):
        out.requires_grad = True
        tape.record(tuple(inputs), out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def matmul(tape, a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    _check_finite("matmul", a, b)
    bd = b.data.swapaxes(-1, -2) if transpose_b else b.data
    if a.data.ndim < 2 or bd.ndim < 2 or a.data.shape[-1] != bd.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        value = a.data @ bd
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward_fn(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, bd.shape)
        if transpose_b:
            gb = gb.swapaxes(-1, -2)
        return ga, gb

    return _make_output(tape, "matmul", (a, b), value, backward_fn)


def _elementwise_pair(tape, op, a, b, fwd, da, db):
    _check_finite(op, a, b)
    try:
        value = fwd(a.data, b.data)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None

    def backward_fn(g):
        return (_unbroadcast(da(g, a.data, b.data), a.shape),
                _unbroadcast(db(g, a.data, b.data), b.shape))

    return _make_output(tape, op, (a, b), value, backward_fn)


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    return _elementwise_pair(tape, "add", a, b,
                             lambda x, y: x + y,
                             lambda g, x, y: g,
                             lambda g, x, y: g)


def sub(tape, a: Tensor, b: Tensor) -> Tensor:
    return _elementwise_pair(tape, "sub", a, b,
                             lambda x, y: x - y,
                             lambda g, x, y: g,
                             lambda g, x, y: -g)


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    return _elementwise_pair(tape, "mul", a, b,
                             lambda x, y: x * y,
                             lambda g, x, y: g * y,
                             lambda g, x, y: g * x)


def scale(tape, a: Tensor, factor: float) -> Tensor:
    _check_finite("scale", a)
    value = a.data * factor

    def backward_fn(g):
        return (g * factor,)

    return _make_output(tape, "scale", (a,), value, backward_fn)


def concat_last_axis(tape, *tensors: Tensor) -> Tensor:
    _check_finite("concat-last-axis", *tensors)
    lead = tensors[0].data.shape[:-1]
    if any(t.data.shape[:-1] != lead for t in tensors):
        raise ShapeError("concat-last-axis", *(t.shape for t in tensors))
    value = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.data.shape[-1] for t in tensors]

    def backward_fn(g):
        splits = np.split(g, np.cumsum(widths)[:-1], axis=-1)
        return tuple(splits)

    return _make_output(tape, "concat-last-axis", tensors, value, backward_fn)


def relu(tape, a: Tensor) -> Tensor:
    _check_finite("relu", a)
    value = np.maximum(a.data, 0.0)

    def backward_fn(g):
        # subgradient at 0 is 0
        return (g * (a.data > 0.0),)

    return _make_output(tape, "relu", (a,), value, backward_fn)


def sigmoid(tape, a: Tensor) -> Tensor:
    _check_finite("sigmoid", a)
    value = 1.0 / (1.0 + np.exp(-a.data))

    def backward_fn(g):
        return (g * value * (1.0 - value),)

    return _make_output(tape, "sigmoid", (a,), value, backward_fn)


def tanh(tape, a: Tensor) -> Tensor:
    _check_finite("tanh", a)
    value = np.tanh(a.data)

    def backward_fn(g):
        return (g * (1.0 - value * value),)

    return _make_output(tape, "tanh", (a,), value, backward_fn)


def row_softmax(tape, a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis.

    ``mask`` is a boolean array broadcastable to ``a``; False positions get
    exactly zero probability. A fully masked row raises.
    """
    _check_finite("row-softmax", a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=-1).all():
            raise ShapeError("row-softmax", a.shape)  # fully masked row
        shifted = np.where(mask, x, -np.inf)
        shifted = shifted - shifted.max(axis=-1, keepdims=True)
        exps = np.where(mask, np.exp(shifted), 0.0)
    else:
        exps = np.exp(x - x.max(axis=-1, keepdims=True))
    value = exps / exps.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        inner = (g * value).sum(axis=-1, keepdims=True)
        return (value * (g - inner),)

    return _make_output(tape, "row-softmax", (a,), value, backward_fn)


def dropout(tape, a: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales kept activations by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate {rate} outside [0, 1)")
    _check_finite("dropout", a)
    if not train or rate == 0.0:
        value = a.data.copy()

        def backward_fn(g):
            return (g,)
    else:
        if rng is None:
            raise ValueError("dropout: train mode needs an rng")
        keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
        value = a.data * keep

        def backward_fn(g):
            return (g * keep,)

    return _make_output(tape, "dropout", (a,), value, backward_fn)


def sum_axis(tape, a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over one axis, or over everything (axis=None) to a scalar."""
    _check_finite("sum-axis", a)
    value = a.data.sum(axis=axis)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _make_output(tape, "sum-axis", (a,), value, backward_fn)


def log(tape, a: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(a, floor)); the clamp keeps cross-entropy finite."""
    _check_finite("log", a)
    clamped = np.maximum(a.data, floor)
    value = np.log(clamped)

    def backward_fn(g):
        return (np.where(a.data > floor, g / clamped, 0.0),)

    return _make_output(tape, "log", (a,), value, backward_fn)


def reshape(tape, a: Tensor, shape) -> Tensor:
    _check_finite("reshape", a)
    value = a.data.reshape(shape)

    def backward_fn(g):
        return (g.reshape(a.data.shape),)

    return _make_output(tape, "reshape", (a,), value, backward_fn)


def embedding_lookup(tape, table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by an integer id array."""
    _check_finite("embedding-lookup", table)
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.data.shape[0]:
        raise ShapeError("embedding-lookup", table.shape, ids.shape)
    value = table.data[ids]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make_output(tape, "embedding-lookup", (table,), value, backward_fn)


def reverse_padded(tape, a: Tensor, lengths: np.ndarray) -> Tensor:
    """Reverse each sequence's first ``lengths[i]`` steps along axis 1.

    Padding positions stay in place, so the op is an involution and its
    backward rule is itself.
    """
    _check_finite("reverse-padded", a)
    B, L = a.data.shape[0], a.data.shape[1]
    idx = np.tile(np.arange(L), (B, 1))
    for i, n in enumerate(lengths):
        idx[i, :n] = np.arange(n - 1, -1, -1)
    rows = np.arange(B)[:, None]
    value = a.data[rows, idx]

    def backward_fn(g):
        return (g[rows, idx],)

    return _make_output(tape, "reverse-padded", (a,), value, backward_fn)


def select_time(tape, a: Tensor, positions: np.ndarray) -> Tensor:
    """Pick one timestep per batch row: out[i] = a[i, positions[i]]."""
    _check_finite("select-time", a)
    B = a.data.shape[0]
    rows = np.arange(B)
    value = a.data[rows, positions]

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga[rows, positions] = g
        return (ga,)

    return _make_output(tape, "select-time", (a,), value, backward_fn)


_FORWARD_KINDS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat-last-axis": concat_last_axis,
    "row-softmax": row_softmax,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "dropout": dropout,
    "sum-axis": sum_axis,
    "scale": scale,
}


def forward_op(tape, kind: str, inputs, **attrs) -> Tensor:
    """Dispatch by op-kind string; the named functions are the real API."""
    if kind not in _FORWARD_KINDS:
        raise ValueError(f"unknown op kind {kind!r}")
    return _FORWARD_KINDS[kind](tape, *inputs, **attrs)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(tensor) into .grad for every requires_grad tensor.

    Tensors on the tape that do not influence the loss receive zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {list(loss.shape)}")
    if not tape.nodes:
        raise ValueError("backward: empty tape")
    flowing = {id(loss): np.ones_like(loss.data)}
    seen = {id(loss): loss}
    for inputs, output, backward_fn in reversed(tape.nodes):
        seen[id(output)] = output
        for t in inputs:
            seen[id(t)] = t
        g = flowing.get(id(output))
        if g is None:
            continue
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in flowing:
                flowing[key] = flowing[key] + gi
            else:
                flowing[key] = gi
    for key, t in seen.items():
        if t.requires_grad:
            t.accumulate_grad(flowing.get(key, np.zeros_like(t.data)))


def finite_difference_check(f, params, step: float = 1e-5) -> float:
    """Compare f's tape gradients against central differences.

    ``f(tape)`` must rebuild the scalar loss from the live param values;
    called with ``tape=None`` it evaluates without recording. Returns the
    max relative error over every entry of every param. Raises if two
    plain evaluations of f disagree (nondeterminism).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    first, second = f(None).item(), f(None).item()
    if first != second:
        raise ValueError("finite_difference_check: f is not deterministic")

    for p in params:
        p.zero_grad()
    tape = Tape()
    loss = f(tape)
    backward(tape, loss)

    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(None).item()
            flat[i] = orig - step
            fm = f(None).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            err = abs(aflat[i] - numeric) / max(1e-8, abs(aflat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
