"""Dense 2-D float64 tensors with reverse-mode differentiation on an explicit tape.

The whole training stack bottoms out here: matrix products, the segment
(scatter/gather) primitives that message passing needs, the masked
classification loss, and the optimizers. Ops are free functions taking the
tape as first argument; pass ``tape=None`` to run inference without
recording. Gradients are accumulated into ``Tensor.grad`` for leaves with
``requires_grad`` and are verified against central finite differences by
`finite_diff_check`.

Determinism contract: every op reduces in a fixed order (the order of the
arc/index arrays it is given), so identical inputs produce bit-identical
outputs and gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ArcIndexError, BatchError, DimensionError, LabelError


class Tensor:
    """A rows x cols matrix of float64 with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @staticmethod
    def zeros(rows: int, cols: int, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


def zero_grads(params: Iterable[Tensor] | dict):
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.zero_grad()


class Tape:
    """Ordered record of executed ops; backward replays them once, in reverse.

    Each record is (output, inputs, backward_fn) where backward_fn maps the
    upstream gradient of the output to a list of (input, gradient) pairs.
    Records are appended in execution order, which is topological by
    construction, so a single reverse sweep suffices.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._tracked: set[int] = set()

    def needs_grad(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        if any(self.needs_grad(t) for t in inputs):
            self._tracked.add(id(out))
            self._records.append((out, tuple(inputs), backward))

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor):
        """Seed d(loss)=1 and accumulate gradients into requires_grad leaves."""
        if loss.shape != (1, 1):
            raise DimensionError(f"backward needs a 1x1 loss, got {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for out, inputs, backward in reversed(self._records):
            upstream = grads.pop(id(out), None)
            if upstream is None:
                continue
            for tensor, grad in backward(upstream):
                if grad is None:
                    continue
                if tensor.requires_grad:
                    if tensor.grad is None:
                        tensor.grad = np.zeros_like(tensor.data)
                    tensor.grad += grad
                if id(tensor) in self._tracked:
                    held = grads.get(id(tensor))
                    grads[id(tensor)] = grad if held is None else held + grad


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def matmul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Matrix product a @ b; backward is dA = dC @ B^T, dB = A^T @ dC."""
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    if tape is not None:
        a_data, b_data = a.data, b.data
        tape.record(out, (a, b), lambda g: [(a, g @ b_data.T), (b, a_data.T @ g)])
    return out


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may also be a 1 x cols bias row added to every row."""
    bias = b.shape == (1, a.cols) and a.rows != 1
    if not bias and a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape}")
    out = Tensor(a.data + b.data)
    if tape is not None:
        if bias:
            tape.record(out, (a, b), lambda g: [(a, g), (b, g.sum(axis=0, keepdims=True))])
        else:
            tape.record(out, (a, b), lambda g: [(a, g), (b, g)])
    return out


def sub(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape}")
    out = Tensor(a.data - b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: [(a, g), (b, -g)])
    return out


def mul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data)
    if tape is not None:
        a_data, b_data = a.data, b.data
        tape.record(out, (a, b), lambda g: [(a, g * b_data), (b, g * a_data)])
    return out


def scale(tape: Tape | None, a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.data * factor)
    if tape is not None:
        tape.record(out, (a,), lambda g: [(a, g * factor)])
    return out


def scale_rows(tape: Tape | None, x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of x by s[i, 0]; the one per-row scaling the layers need."""
    if s.shape != (x.rows, 1):
        raise DimensionError(f"scale_rows: scale shape {s.shape} for x {x.shape}")
    out = Tensor(x.data * s.data)
    if tape is not None:
        x_data, s_data = x.data, s.data
        tape.record(
            out,
            (x, s),
            lambda g: [(x, g * s_data), (s, (g * x_data).sum(axis=1, keepdims=True))],
        )
    return out


def relu(tape: Tape | None, a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    if tape is not None:
        mask = a.data > 0.0
        tape.record(out, (a,), lambda g: [(a, g * mask)])
    return out


def leaky_relu(tape: Tape | None, a: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(np.where(a.data > 0.0, a.data, slope * a.data))
    if tape is not None:
        factor = np.where(a.data > 0.0, 1.0, slope)
        tape.record(out, (a,), lambda g: [(a, g * factor)])
    return out


def concat_cols(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise DimensionError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    if tape is not None:
        split = a.cols
        tape.record(out, (a, b), lambda g: [(a, g[:, :split]), (b, g[:, split:])])
    return out


def concat_rows(tape: Tape | None, parts: Sequence[Tensor]) -> Tensor:
    """Stack blocks vertically; backward splits the gradient back into blocks."""
    if not parts:
        raise DimensionError("concat_rows: need at least one block")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise DimensionError(f"concat_rows: column counts differ, {p.cols} vs {cols}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    if tape is not None:
        bounds = np.cumsum([0] + [p.rows for p in parts])
        parts = tuple(parts)

        def backward(g):
            return [(p, g[bounds[i] : bounds[i + 1]]) for i, p in enumerate(parts)]

        tape.record(out, parts, backward)
    return out


def gather_rows(tape: Tape | None, x: Tensor, idx) -> Tensor:
    """Row lookup: out[i] = x[idx[i]]; backward scatter-adds duplicates."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    n = x.rows
    bad = np.nonzero((idx < 0) | (idx >= n))[0]
    if bad.size:
        k = int(bad[0])
        raise ArcIndexError(f"arc {k}: row index {int(idx[k])} out of range [0, {n})")
    out = Tensor(x.data[idx]) if idx.size else Tensor(np.zeros((0, x.cols)))
    if tape is not None:

        def backward(g):
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            return [(x, dx)]

        tape.record(out, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# segment ops (per-destination reductions over arc messages)
# ---------------------------------------------------------------------------


def _check_segments(dst, num_segments: int, expected_len: int) -> np.ndarray:
    dst = np.asarray(dst, dtype=np.int64).reshape(-1)
    if dst.size != expected_len:
        raise DimensionError(f"{dst.size} destinations for {expected_len} messages")
    if dst.size and (dst.min() < 0 or dst.max() >= num_segments):
        raise ArcIndexError(f"destination index out of range [0, {num_segments})")
    return dst


def segment_reduce(
    tape: Tape | None, msgs: Tensor, dst, num_segments: int, mode: str = "mean"
) -> Tensor:
    """Reduce messages into their destination rows.

    mode is one of sum | mean | max. Destinations with no incoming message
    get zeros. Sum/mean accumulate in the given arc order; max ties route
    the gradient to the first occurrence in arc order.
    """
    if mode not in ("sum", "mean", "max"):
        raise ValueError(f"unknown segment_reduce mode {mode!r}")
    dst = _check_segments(dst, num_segments, msgs.rows)
    e, d = msgs.shape
    counts = np.bincount(dst, minlength=num_segments).astype(np.float64)

    if mode == "max":
        acc = np.full((num_segments, d), -np.inf)
        if e:
            np.maximum.at(acc, dst, msgs.data)
        out_data = np.where(counts[:, None] > 0, acc, 0.0)
        out = Tensor(out_data)
        if tape is not None:
            msgs_data = msgs.data

            def backward_max(g):
                dmsgs = np.zeros_like(msgs_data)
                if e:
                    # winner per (segment, column) = smallest arc index hitting the max
                    is_max = msgs_data == acc[dst]
                    cand = np.where(is_max, np.arange(e, dtype=np.int64)[:, None], e)
                    win = np.full((num_segments, d), e, dtype=np.int64)
                    np.minimum.at(win, dst, cand)
                    seg, col = np.nonzero(win < e)
                    dmsgs[win[seg, col], col] += g[seg, col]
                return [(msgs, dmsgs)]

            tape.record(out, (msgs,), backward_max)
        return out

    acc = np.zeros((num_segments, d))
    if e:
        np.add.at(acc, dst, msgs.data)
    if mode == "mean":
        denom = np.maximum(counts, 1.0)
        out = Tensor(acc / denom[:, None])
        if tape is not None:
            tape.record(out, (msgs,), lambda g: [(msgs, g[dst] / denom[dst][:, None])])
    else:
        out = Tensor(acc)
        if tape is not None:
            tape.record(out, (msgs,), lambda g: [(msgs, g[dst])])
    return out


def segment_softmax(tape: Tape | None, scores: Tensor, dst, num_segments: int) -> Tensor:
    """Softmax over the arcs sharing a destination, max-shifted for stability."""
    if scores.cols != 1:
        raise DimensionError(f"segment_softmax expects e x 1 scores, got {scores.shape}")
    dst = _check_segments(dst, num_segments, scores.rows)
    s = scores.data[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    if s.size:
        np.maximum.at(seg_max, dst, s)
    shifted = np.exp(s - np.where(np.isfinite(seg_max), seg_max, 0.0)[dst]) if s.size else s
    denom = np.zeros(num_segments)
    if s.size:
        np.add.at(denom, dst, shifted)
    alpha = shifted / denom[dst] if s.size else shifted
    out = Tensor(alpha.reshape(-1, 1))
    if tape is not None:

        def backward(g):
            gv = g[:, 0]
            dot = np.zeros(num_segments)
            np.add.at(dot, dst, alpha * gv)
            return [(scores, (alpha * (gv - dot[dst])).reshape(-1, 1))]

        tape.record(out, (scores,), backward)
    return out


def softmax_cross_entropy(tape: Tape | None, logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood over masked rows.

    labels: int array of length rows (ignored where mask is False).
    mask: bool array of length rows; at least one row must be selected.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    n, c = logits.shape
    if labels.size != n or mask.size != n:
        raise DimensionError(f"labels/mask length must be {n}")
    m = int(mask.sum())
    if m == 0:
        raise BatchError("cross entropy over an empty mask")
    sel = labels[mask]
    if sel.size and (sel.min() < 0 or sel.max() >= c):
        raise LabelError(f"label out of range [0, {c}) on a masked row")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    rows = np.nonzero(mask)[0]
    losses = lse[rows] - z[rows, labels[rows]]
    out = Tensor(np.array([[losses.sum() / m]]))
    if tape is not None:

        def backward(g):
            soft = np.exp(z - zmax)
            soft /= soft.sum(axis=1, keepdims=True)
            dz = np.zeros_like(z)
            dz[rows] = soft[rows]
            dz[rows, labels[rows]] -= 1.0
            return [(logits, dz * (g[0, 0] / m))]

        tape.record(out, (logits,), backward)
    return out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Plain numpy row softmax for inference-time probabilities."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def dropout(tape: Tape | None, x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout driven by the caller's RNG (so runs are reproducible)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask)
    if tape is not None:
        tape.record(out, (x,), lambda g: [(x, g * mask)])
    return out


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam; moment buffers are created on first use."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class SgdState:
    """Plain SGD behind the same (params, grads, state) interface."""

    lr: float = 5e-4
    step_count: int = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState):
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionError(f"adam: grad shape {g.shape} != param {p.data.shape} ({name})")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.data.shape:
            raise DimensionError(f"adam: moment shape {m.shape} != param {p.data.shape} ({name})")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: SgdState):
    state.step_count += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionError(f"sgd: grad shape {g.shape} != param {p.data.shape} ({name})")
        p.data -= state.lr * g


def optimizer_step(kind: str, params, grads, state):
    if kind == "adam":
        adam_step(params, grads, state)
    elif kind == "sgd":
        sgd_step(params, grads, state)
    else:
        raise ValueError(f"unknown optimizer {kind!r}")


def make_optimizer_state(kind: str, lr: float):
    if kind == "adam":
        return AdamState(lr=lr)
    if kind == "sgd":
        return SgdState(lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def finite_diff_check(
    f: Callable[[Tape | None], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare tape gradients of a scalar computation to central differences.

    `f(tape)` must rebuild the same computation each call (deterministically)
    and return a 1x1 tensor. Returns the max per-coordinate relative error
    |ad - fd| / max(|ad|, |fd|, 1), the unit floor keeping near-zero
    gradients from amplifying finite-difference rounding noise.
    """
    zero_grads(params)
    tape = Tape()
    loss = f(tape)
    tape.backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(None).item()
            flat[i] = orig - eps
            down = f(None).item()
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            err = abs(ad[i] - fd) / max(abs(ad[i]), abs(fd), 1.0)
            worst = max(worst, err)
    return worst
