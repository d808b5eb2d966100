"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

The design is deliberately small: a Tensor is a numpy array plus an optional
link to the Tape that produced it.  Ops are plain functions; when any operand
is tape-linked the result is recorded so `backward` can replay the chain rule
in reverse creation order.  Tensors without a tape link are just immutable
value carriers and every op degenerates to plain numpy on them.

Only the broadcasting cases the package actually needs are implemented
(scalar scaling, per-row weights, a row-vector bias).  Everything else
requires exact shape agreement and raises ShapeError otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractViolationError,
    DegenerateInputError,
    ParameterError,
    ShapeError,
    TrainingDivergenceError,
)

LEAKY_SLOPE = 0.2


class Tensor:
    """A dense float64 array, optionally recorded on a Tape."""

    __slots__ = ("data", "tape", "tape_id")

    def __init__(self, data, tape: "Tape | None" = None, tape_id: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.tape_id = tape_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f", tape_id={self.tape_id}" if self.tape is not None else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Light operator sugar; all semantics live in the module-level ops.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    out_id: int
    parent_ids: tuple
    vjp: Callable | None  # maps dL/dout -> tuple of dL/dparent arrays


class Tape:
    """Ordered record of operations; single-owner, not thread safe."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.gradients: dict[int, np.ndarray] = {}
        self._next_id = 0

    def leaf(self, data) -> Tensor:
        """Register a parameter (or input) the tape should track."""
        t = Tensor(data, tape=self, tape_id=self._next_id)
        self.nodes.append(_Node(self._next_id, (), None))
        self._next_id += 1
        return t

    def record(self, data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
        pids = tuple(p.tape_id if p.tape is not None else None for p in parents)
        t = Tensor(data, tape=self, tape_id=self._next_id)
        self.nodes.append(_Node(self._next_id, pids, vjp))
        self._next_id += 1
        return t

    def release(self) -> None:
        """Drop recorded closures and cached gradients.

        The recorded tensors reference this tape and the tape's closures
        reference them back, so a finished graph otherwise lingers until
        the cycle collector runs; training loops call this every epoch to
        keep peak memory at one epoch's working set.  The tape cannot be
        replayed afterwards.
        """
        self.nodes.clear()
        self.gradients.clear()


def _shared_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractViolationError("operands recorded on different tapes")
    return tape


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss; returns tape_id -> gradient.

    Pure with respect to the tape: calling it twice gives identical results.
    """
    if loss.tape is not tape:
        raise ContractViolationError("loss was not recorded on this tape")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {loss.tape_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.out_id)
        if g is None or node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        for pid, pg in zip(node.parent_ids, parent_grads):
            if pid is None or pg is None:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    tape.gradients = grads
    return grads


# ---------------------------------------------------------------------------
# arithmetic


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = a.data + b.data
    tape = _shared_tape(a, b)
    if tape is None:
        return Tensor(out)
    return tape.record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = a.data - b.data
    tape = _shared_tape(a, b)
    if tape is None:
        return Tensor(out)
    return tape.record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = a.data * b.data
    tape = _shared_tape(a, b)
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data
    return tape.record(out, (a, b), lambda g: (g * bd, g * ad))


def neg(x: Tensor) -> Tensor:
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(-x.data)
    return tape.record(-x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant (not differentiated through)."""
    c = float(c)
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(x.data * c)
    return tape.record(x.data * c, (x,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    tape = _shared_tape(a, b)
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data
    return tape.record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-C vector to every row of an (R, C) matrix."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"add_rowvec: {x.data.shape} + {v.data.shape}")
    out = x.data + v.data[None, :]
    tape = _shared_tape(x, v)
    if tape is None:
        return Tensor(out)
    return tape.record(out, (x, v), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# elementwise nonlinearities
#
# Kinks (relu/abs/leaky at 0) use subgradient 0 exactly at the kink.


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    mask = (x.data > 0).astype(np.float64)
    return tape.record(out, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    out = np.where(x.data > 0, x.data, slope * x.data)
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    d = np.where(x.data > 0, 1.0, np.where(x.data < 0, slope, 0.0))
    return tape.record(out, (x,), lambda g: (g * d,))


def absval(x: Tensor) -> Tensor:
    out = np.abs(x.data)
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    s = np.sign(x.data)  # sign(0) == 0: subgradient 0 at the kink
    return tape.record(out, (x,), lambda g: (g * s,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    d = s * (1.0 + x.data * (1.0 - s))
    return tape.record(out, (x,), lambda g: (g * d,))


def elu(x: Tensor) -> Tensor:
    out = np.where(x.data > 0, x.data, np.expm1(x.data))
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    d = np.where(x.data > 0, 1.0, np.exp(np.minimum(x.data, 0.0)))
    return tape.record(out, (x,), lambda g: (g * d,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    return tape.record(out, (x,), lambda g: (g * (1.0 - out * out),))


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of two (R, C) matrices -> (R,)."""
    _same_shape(a, b, "cosine_rows")
    if a.data.ndim != 2:
        raise ShapeError(f"cosine_rows expects 2-D input, got {a.data.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("cosine_rows: zero-norm row")
    dot = np.einsum("rc,rc->r", a.data, b.data)
    out = dot / (na * nb)
    tape = _shared_tape(a, b)
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = (bd / (na * nb)[:, None] - ad * (out / na**2)[:, None]) * g[:, None]
        gb = (ad / (na * nb)[:, None] - bd * (out / nb**2)[:, None]) * g[:, None]
        return ga, gb

    return tape.record(out, (a, b), vjp)


_ELEMENTWISE = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "abs": absval,
    "neg": neg,
    "silu": silu,
}


def elementwise(x: Tensor, kind: str, other: Tensor | None = None, slope: float = LEAKY_SLOPE) -> Tensor:
    """Dispatch by name; `cosine_rows` is the one binary kind."""
    if kind == "cosine_rows":
        if other is None:
            raise ParameterError("cosine_rows needs a second operand")
        return cosine_rows(x, other)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    try:
        return _ELEMENTWISE[kind](x)
    except KeyError:
        raise ParameterError(f"unknown elementwise kind {kind!r}") from None


# ---------------------------------------------------------------------------
# shape / indexing ops


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"concat_cols: {a.data.shape} | {b.data.shape}")
    out = np.concatenate([a.data, b.data], axis=1)
    tape = _shared_tape(a, b)
    if tape is None:
        return Tensor(out)
    ca = a.data.shape[1]
    return tape.record(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.data.shape} to {shape}") from None
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    orig = x.data.shape
    return tape.record(out, (x,), lambda g: (g.reshape(orig),))


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows expects 2-D input, got {x.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError("gather_rows: index out of range")
    out = x.data[idx]
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    n = x.data.shape[0]

    def vjp(g):
        gx = np.zeros((n, x.data.shape[1]))
        np.add.at(gx, idx, g)
        return (gx,)

    return tape.record(out, (x,), vjp)


def mul_rows(x: Tensor, w: Tensor) -> Tensor:
    """Scale row r of an (R, C) matrix by w[r]."""
    if x.data.ndim != 2 or w.data.ndim != 1 or x.data.shape[0] != w.data.shape[0]:
        raise ShapeError(f"mul_rows: {x.data.shape} * {w.data.shape}")
    out = x.data * w.data[:, None]
    tape = _shared_tape(x, w)
    if tape is None:
        return Tensor(out)
    xd, wd = x.data, w.data
    return tape.record(out, (x, w), lambda g: (g * wd[:, None], np.einsum("rc,rc->r", g, xd)))


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "rowwise_dot")
    if a.data.ndim != 2:
        raise ShapeError(f"rowwise_dot expects 2-D input, got {a.data.shape}")
    out = np.einsum("rc,rc->r", a.data, b.data)
    tape = _shared_tape(a, b)
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data
    return tape.record(out, (a, b), lambda g: (g[:, None] * bd, g[:, None] * ad))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    shp = x.data.shape
    return tape.record(out, (x,), lambda g: (np.broadcast_to(np.asarray(g).reshape(()), shp).copy(),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


# ---------------------------------------------------------------------------
# segment ops (the message-passing workhorses)


def _check_segments(segments: np.ndarray, num_segments: int | None, n_rows: int):
    segments = np.asarray(segments, dtype=np.int64)
    if segments.ndim != 1 or segments.shape[0] != n_rows:
        raise ShapeError(f"segments must be 1-D of length {n_rows}")
    if num_segments is None:
        num_segments = int(segments.max()) + 1 if segments.size else 0
    if segments.size and (segments.min() < 0 or segments.max() >= num_segments):
        raise ShapeError("segment id out of range")
    counts = np.bincount(segments, minlength=num_segments)
    if np.any(counts == 0):
        empty = int(np.argmin(counts))
        raise ContractViolationError(f"segment {empty} is empty")
    return segments, num_segments


def segment_sum(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of x into num_segments buckets keyed by `segments`."""
    if x.data.ndim != 2:
        raise ShapeError(f"segment_sum expects 2-D input, got {x.data.shape}")
    segments, num_segments = _check_segments(segments, num_segments, x.data.shape[0])
    out = np.zeros((num_segments, x.data.shape[1]))
    np.add.at(out, segments, x.data)
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    return tape.record(out, (x,), lambda g: (g[segments],))


def segment_softmax(scores: Tensor, segments: np.ndarray, num_segments: int | None = None) -> Tensor:
    """Softmax within each segment, with per-segment max subtraction.

    Subtracting the segment max keeps exp() bounded and makes the result
    exactly invariant to adding a constant to all scores of a segment.
    """
    if scores.data.ndim != 1:
        raise ShapeError(f"segment_softmax expects 1-D scores, got {scores.data.shape}")
    segments, num_segments = _check_segments(segments, num_segments, scores.data.shape[0])
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, scores.data)
    shifted = scores.data - seg_max[segments]
    e = np.exp(shifted)
    denom = np.zeros(num_segments)
    np.add.at(denom, segments, e)
    out = e / denom[segments]
    tape = _shared_tape(scores)
    if tape is None:
        return Tensor(out)

    def vjp(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, segments, g * out)
        return (out * (g - dot[segments]),)

    return tape.record(out, (scores,), vjp)


# ---------------------------------------------------------------------------
# regularization and losses


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; identity when rate == 0 or not training."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(np.float64) / (1.0 - rate)
    out = x.data * keep
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(out)
    return tape.record(out, (x,), lambda g: (g * keep,))


def masked_cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean cross-entropy over rows where mask is True."""
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if labels.shape[0] != logits.data.shape[0] or mask.shape[0] != logits.data.shape[0]:
        raise ShapeError("labels/mask length does not match logits rows")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ParameterError("cross entropy over an empty mask")
    z = logits.data[rows]
    y = labels[rows]
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ParameterError("label outside logit width")
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    out = np.asarray((lse - z[np.arange(rows.size), y]).mean())
    tape = _shared_tape(logits)
    if tape is None:
        return Tensor(out)

    def vjp(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(rows.size), y] -= 1.0
        gz = np.zeros_like(logits.data)
        gz[rows] = p / rows.size
        return (gz * float(np.asarray(g).reshape(())),)

    return tape.record(out, (logits,), vjp)


def bce_with_logits(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw scores, numerically stable."""
    if scores.data.ndim != 1:
        raise ShapeError(f"scores must be 1-D, got {scores.data.shape}")
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != scores.data.shape:
        raise ShapeError("targets length does not match scores")
    s = scores.data
    out = np.asarray((np.maximum(s, 0.0) - s * t + np.log1p(np.exp(-np.abs(s)))).mean())
    tape = _shared_tape(scores)
    if tape is None:
        return Tensor(out)

    def vjp(g):
        return ((_sigmoid(s) - t) / s.size * float(np.asarray(g).reshape(())),)

    return tape.record(out, (scores,), vjp)


def masked_mse(pred: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error over masked entries of a 1-D prediction."""
    if pred.data.ndim != 1:
        raise ShapeError(f"pred must be 1-D, got {pred.data.shape}")
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ShapeError("targets length does not match pred")
    if mask is None:
        rows = np.arange(pred.data.shape[0])
    else:
        rows = np.flatnonzero(np.asarray(mask, dtype=bool))
        if rows.size == 0:
            raise ParameterError("mse over an empty mask")
    diff = pred.data[rows] - t[rows]
    out = np.asarray((diff * diff).mean())
    tape = _shared_tape(pred)
    if tape is None:
        return Tensor(out)

    def vjp(g):
        gp = np.zeros_like(pred.data)
        gp[rows] = 2.0 * diff / rows.size
        return (gp * float(np.asarray(g).reshape(())),)

    return tape.record(out, (pred,), vjp)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        st = cls(**kw)
        for k, p in params.items():
            st.m[k] = np.zeros_like(p)
            st.v[k] = np.zeros_like(p)
        return st


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns the new parameter dict.

    Weight decay enters as a plain L2 term added to the gradient.  Missing
    gradients are treated as zero so unreached parameters stay put.
    """
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    out: dict[str, np.ndarray] = {}
    for name in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {name!r}", param=name)
        if weight_decay:
            g = g + weight_decay * params[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = state.m[name] / (1 - b1**t)
        vhat = state.v[name] / (1 - b2**t)
        out[name] = params[name] - lr * mhat / (np.sqrt(vhat) + eps)
    return out


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between tape gradients of f and central differences.

    f must accept a Tensor and return a scalar Tensor.  It is called once on
    a tape-linked copy of x for the analytic gradient and then 2*x.size times
    off-tape for the numeric estimate.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xt = tape.leaf(x)
    loss = f(xt)
    grads = backward(tape, loss)
    analytic = grads.get(xt.tape_id)
    if analytic is None:
        analytic = np.zeros_like(x)
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        xp = (flat + bump).reshape(x.shape)
        xm = (flat - bump).reshape(x.shape)
        numeric = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2 * h)
        a = float(analytic.reshape(-1)[i])
        rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
        worst = max(worst, rel)
    return worst
