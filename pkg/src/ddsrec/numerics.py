"""Minimal reverse-mode differentiation over dense float64 matrices.

Every model computation in this package is expressed through the operations
below, so every gradient the trainer consumes can be verified against central
finite differences (see :func:`grad_check`). The engine is tape-based: while a
:class:`Tape` is active in the current thread, each operation records a
backward rule; :meth:`Tape.backward` replays the rules in reverse creation
order, which is a valid topological order because operands always exist
before the operation that consumes them.

Matrices are always 2-D, row-major, double precision. Operations run fine
without an active tape (forward-only), which is how evaluation and finite
differencing work.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeMismatch",
    "NumericalError",
    "DiffMatrix",
    "Tape",
    "matmul",
    "transpose",
    "add",
    "mul",
    "relu",
    "scale",
    "add_bias",
    "elementwise",
    "reduce_rows",
    "sum_all",
    "concat_cols",
    "gather_rows",
    "softmax_rows",
    "layer_norm_rows",
    "cross_entropy_softmax",
    "multilabel_cross_entropy",
    "grad_reverse",
    "dropout",
    "backward",
    "grad_check",
    "GradCheckReport",
]


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""


class NumericalError(RuntimeError):
    """Raised on non-finite values where the contract requires finiteness."""


_LOCAL = threading.local()


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class DiffMatrix:
    """Dense matrix with a value buffer and a same-shaped gradient buffer.

    Leaves (parameters, constants) are built directly; operation results are
    built internally and carry a backward rule plus parent references. The
    ``node_id`` is the position on the recording tape, or None when the node
    was created while no tape was active.
    """

    __slots__ = ("values", "grad", "node_id", "_parents", "_backward")

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeMismatch(f"DiffMatrix must be 2-D, got shape {arr.shape}")
        self.values = arr
        self.grad = np.zeros_like(arr)
        self.node_id = None
        self._parents = ()
        self._backward = None

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def __repr__(self):
        return f"DiffMatrix(shape={self.shape}, node_id={self.node_id})"


class Tape:
    """Ordered record of operations for one backward pass.

    Use as a context manager; one tape may be active per thread. Creation
    order is topological by construction. A tape can be consumed by exactly
    one backward pass.
    """

    def __init__(self):
        self.nodes: list[DiffMatrix] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("another tape is already active in this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.tape = None
        return False

    def _record(self, node: DiffMatrix) -> None:
        node.node_id = len(self.nodes)
        self.nodes.append(node)

    def backward(self, loss: DiffMatrix) -> None:
        """Accumulate d(loss)/d(node) into .grad for every recorded node
        and every leaf they reference. The loss must be a 1x1 node recorded
        on this tape; a tape can only be walked once."""
        if self._spent:
            raise RuntimeError("tape already consumed by a backward pass")
        if loss.values.shape != (1, 1):
            raise ShapeMismatch(f"loss must be 1x1, got {loss.values.shape}")
        if loss.node_id is None or loss.node_id >= len(self.nodes) or self.nodes[loss.node_id] is not loss:
            raise ValueError("loss node was not recorded on this tape")
        self._spent = True
        loss.grad[0, 0] += 1.0
        for node in reversed(self.nodes):
            if node._backward is not None:
                node._backward(node.grad)


def backward(tape: Tape, loss: DiffMatrix) -> None:
    tape.backward(loss)


def _make(values: np.ndarray, parents, backward_fn) -> DiffMatrix:
    out = DiffMatrix.__new__(DiffMatrix)
    out.values = values
    out.grad = np.zeros_like(values)
    out.node_id = None
    out._parents = tuple(parents)
    out._backward = backward_fn
    tape = _active_tape()
    if tape is not None:
        tape._record(out)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    """Matrix product. Backward: dA += g @ B^T, dB += A^T @ g."""
    if a.cols != b.rows:
        raise ShapeMismatch(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def back(g):
        a.grad += g @ bv.T
        b.grad += av.T @ g

    return _make(av @ bv, (a, b), back)


def transpose(a: DiffMatrix) -> DiffMatrix:
    def back(g):
        a.grad += g.T

    return _make(a.values.T.copy(), (a,), back)


# ---------------------------------------------------------------------------
# elementwise family


def add(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: shapes differ, {a.shape} vs {b.shape}")

    def back(g):
        a.grad += g
        b.grad += g

    return _make(a.values + b.values, (a, b), back)


def mul(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: shapes differ, {a.shape} vs {b.shape}")
    av, bv = a.values, b.values

    def back(g):
        a.grad += g * bv
        b.grad += g * av

    return _make(av * bv, (a, b), back)


def relu(a: DiffMatrix) -> DiffMatrix:
    mask = a.values > 0.0

    def back(g):
        a.grad += g * mask

    return _make(np.where(mask, a.values, 0.0), (a,), back)


def scale(a: DiffMatrix, c: float) -> DiffMatrix:
    c = float(c)

    def back(g):
        a.grad += c * g

    return _make(c * a.values, (a,), back)


def elementwise(a: DiffMatrix, kind: str, other: DiffMatrix | None = None, c: float = 1.0) -> DiffMatrix:
    """Dispatcher over the elementwise family: add, mul, relu, scale(c)."""
    if kind == "add":
        return add(a, other)
    if kind == "mul":
        return mul(a, other)
    if kind == "relu":
        return relu(a)
    if kind == "scale":
        return scale(a, c)
    raise ValueError(f"unknown elementwise kind: {kind!r}")


def add_bias(a: DiffMatrix, bias: DiffMatrix) -> DiffMatrix:
    """Add a 1 x cols bias row to every row of a."""
    if bias.rows != 1 or bias.cols != a.cols:
        raise ShapeMismatch(f"add_bias: bias {bias.shape} does not match {a.shape}")

    def back(g):
        a.grad += g
        bias.grad += g.sum(axis=0, keepdims=True)

    return _make(a.values + bias.values, (a, bias), back)


# ---------------------------------------------------------------------------
# reductions and reshaping


def reduce_rows(a: DiffMatrix, kind: str = "mean") -> DiffMatrix:
    """Collapse rows to a single 1 x cols row by mean or sum."""
    if a.rows < 1:
        raise ShapeMismatch("reduce_rows: empty input")
    if kind not in ("mean", "sum"):
        raise ValueError(f"unknown reduce kind: {kind!r}")
    n = a.rows
    if kind == "mean":
        out = a.values.mean(axis=0, keepdims=True)

        def back(g):
            a.grad += np.broadcast_to(g / n, a.shape)

    else:
        out = a.values.sum(axis=0, keepdims=True)

        def back(g):
            a.grad += np.broadcast_to(g, a.shape)

    return _make(out, (a,), back)


def sum_all(a: DiffMatrix) -> DiffMatrix:
    """Sum of all entries, as a 1x1 matrix."""

    def back(g):
        a.grad += g[0, 0]

    return _make(np.array([[a.values.sum()]]), (a,), back)


def concat_cols(parts: list[DiffMatrix]) -> DiffMatrix:
    """Append columns of all parts in order; backward slices the gradient back."""
    if not parts:
        raise ShapeMismatch("concat_cols: no parts")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeMismatch(
                f"concat_cols: row mismatch, {p.shape} vs {parts[0].shape}"
            )
    widths = [p.cols for p in parts]
    offsets = np.cumsum([0] + widths)
    parts_t = tuple(parts)

    def back(g):
        for p, lo, hi in zip(parts_t, offsets[:-1], offsets[1:]):
            p.grad += g[:, lo:hi]

    return _make(np.concatenate([p.values for p in parts], axis=1), parts_t, back)


def gather_rows(a: DiffMatrix, indices) -> DiffMatrix:
    """Select rows of a by index (embedding lookup); backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeMismatch("gather_rows: indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise IndexError(f"gather_rows: index out of range for {a.rows} rows")

    def back(g):
        np.add.at(a.grad, idx, g)

    return _make(a.values[idx].copy(), (a,), back)


# ---------------------------------------------------------------------------
# nonlinear blocks


def softmax_rows(a: DiffMatrix) -> DiffMatrix:
    """Row-wise softmax with per-row max subtraction for stability."""
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        # dx = y * (g - sum(g * y, row))
        dot = (g * y).sum(axis=1, keepdims=True)
        a.grad += y * (g - dot)

    return _make(y, (a,), back)


def layer_norm_rows(a: DiffMatrix, gain: DiffMatrix, bias: DiffMatrix, eps: float = 1e-8) -> DiffMatrix:
    """Per-row normalization to zero mean and unit variance, then affine.

    eps is added to the variance, so a constant row maps to the bias.
    """
    if gain.shape != (1, a.cols) or bias.shape != (1, a.cols):
        raise ShapeMismatch(
            f"layer_norm_rows: gain {gain.shape} / bias {bias.shape} vs input {a.shape}"
        )
    mu = a.values.mean(axis=1, keepdims=True)
    var = a.values.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.values - mu) * inv
    gv = gain.values

    def back(g):
        gain.grad += (g * xhat).sum(axis=0, keepdims=True)
        bias.grad += g.sum(axis=0, keepdims=True)
        u = g * gv
        m1 = u.mean(axis=1, keepdims=True)
        m2 = (u * xhat).mean(axis=1, keepdims=True)
        a.grad += inv * (u - m1 - xhat * m2)

    return _make(xhat * gv + bias.values, (a, gain, bias), back)


def cross_entropy_softmax(logits: DiffMatrix, target_index: int) -> DiffMatrix:
    """-log softmax(logits)[target] for a single-row logit vector.

    Backward: d(logits) = softmax(logits) - onehot(target).
    """
    if logits.rows != 1:
        raise ShapeMismatch(f"cross_entropy_softmax: logits must be 1 x N, got {logits.shape}")
    target_index = int(target_index)
    if not 0 <= target_index < logits.cols:
        raise IndexError(
            f"cross_entropy_softmax: target {target_index} out of range for {logits.cols} classes"
        )
    z = logits.values[0]
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    loss = lse - z[target_index]
    p = np.exp(z - lse)

    def back(g):
        d = p.copy()
        d[target_index] -= 1.0
        logits.grad += g[0, 0] * d.reshape(1, -1)

    return _make(np.array([[loss]]), (logits,), back)


def multilabel_cross_entropy(logits: DiffMatrix, multi_hot) -> DiffMatrix:
    """Mean over classes of per-class sigmoid cross entropy against a bit vector.

    Computed in the numerically safe form max(z,0) - z*t + log1p(exp(-|z|)).
    Backward: d(logits) = (sigmoid(logits) - t) / n_classes.
    """
    if logits.rows != 1:
        raise ShapeMismatch(f"multilabel_cross_entropy: logits must be 1 x N, got {logits.shape}")
    t = np.asarray(multi_hot, dtype=np.float64).reshape(-1)
    if t.size != logits.cols:
        raise ShapeMismatch(
            f"multilabel_cross_entropy: {logits.cols} logits vs {t.size} targets"
        )
    z = logits.values[0]
    per_class = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = float(t.size)
    # branch on sign so exp never overflows
    ez = np.exp(-np.abs(z))
    sig = np.where(z >= 0.0, 1.0 / (1.0 + ez), ez / (1.0 + ez))

    def back(g):
        logits.grad += g[0, 0] * ((sig - t) / n).reshape(1, -1)

    return _make(np.array([[per_class.mean()]]), (logits,), back)


def grad_reverse(a: DiffMatrix, factor: float = 1.0) -> DiffMatrix:
    """Identity forward; backward multiplies the incoming gradient by -factor."""
    factor = float(factor)

    def back(g):
        a.grad += -factor * g

    return _make(a.values.copy(), (a,), back)


def dropout(a: DiffMatrix, rate: float, rng: np.random.Generator, training: bool) -> DiffMatrix:
    """Inverted dropout: zero entries with probability rate and rescale the
    survivors by 1/(1-rate). Identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def back(g):
        a.grad += g * keep

    return _make(a.values * keep, (a,), back)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckFailure:
    param: str
    index: tuple[int, int]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference sweep: failures are data, not errors."""

    entries_checked: int = 0
    max_rel_err: float = 0.0
    failures: list[GradCheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "pass" if self.passed else f"FAIL ({len(self.failures)} entries)"
        return f"{status}: {self.entries_checked} entries, max rel err {self.max_rel_err:.3e}"


def grad_check(build, params: dict[str, DiffMatrix], step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of build() against central differences.

    build must construct the scalar loss from scratch on every call and be
    deterministic given the current parameter values (dropout disabled). For
    each parameter entry the check is
    |analytic - numeric| / max(1, |numeric|) <= tol.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = build()
        tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report = GradCheckReport()
    for name, p in params.items():
        flat = p.values.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            f_plus = build().item()
            flat[k] = orig - step
            f_minus = build().item()
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            ana = analytic[name].reshape(-1)[k]
            rel = abs(ana - numeric) / max(1.0, abs(numeric))
            report.entries_checked += 1
            report.max_rel_err = max(report.max_rel_err, rel)
            if rel > tol:
                i, j = divmod(k, p.cols)
                report.failures.append(GradCheckFailure(name, (i, j), float(ana), float(numeric), float(rel)))
    return report
