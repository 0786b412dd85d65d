"""Small tape-based reverse-mode differentiation engine.

Every value is a 2-D numpy array (``rows x cols``). Row-vectors are ``1 x n``
and scalars are ``1 x 1``. Operations record a backward closure on the tape
owned by their inputs; :func:`backward` walks that record in reverse.

Example
-------
>>> tape = Tape(dtype=np.float64)
>>> x = tape.param(np.array([[3.0]]), name="x")
>>> y = sum_all(mul(x, x))
>>> grads = backward(tape, y)
>>> float(grads[x.id][0, 0])
6.0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

COSINE_EPS = 1e-12


class ShapeError(ValueError):
    pass


class Tensor:
    """A node on a tape. ``value`` must not be mutated after creation."""

    __slots__ = ("tape", "id", "value", "name")

    def __init__(self, tape: "Tape", value: np.ndarray, name: str = ""):
        self.tape = tape
        self.value = value
        self.name = name
        self.id = tape._next_id()

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor#{self.id}{label}{self.value.shape}"


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: int
    backward: Callable[[np.ndarray], tuple]
    shape: tuple


@dataclass
class Tape:
    """Ordered record of operations.

    ``record=False`` turns the tape into a pure forward evaluator (used for
    scoring at evaluation time). ``debug=True`` checks every op output for
    NaN/Inf.
    """

    dtype: type = np.float32
    record: bool = True
    debug: bool = False
    records: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    _counter: int = 0

    def _next_id(self) -> int:
        self._counter += 1
        return self._counter

    def param(self, value, name: str = "") -> Tensor:
        """Leaf whose gradient is reported by :func:`backward`."""
        t = Tensor(self, _as2d(value, self.dtype), name)
        self.params[t.id] = t
        return t

    def constant(self, value, name: str = "") -> Tensor:
        return Tensor(self, _as2d(value, self.dtype), name)

    def dump(self) -> str:
        """Text listing of the recorded ops, for troubleshooting."""
        lines = []
        for p in self.params.values():
            lines.append(f"param  #{p.id} {p.name or '-'} {p.shape}")
        for r in self.records:
            ins = ",".join(f"#{i}" for i in r.inputs)
            lines.append(f"{r.op:<12} {ins} -> #{r.output} {r.shape}")
        return "\n".join(lines)

    def _emit(self, op: str, inputs, value: np.ndarray, backward) -> Tensor:
        if self.debug and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite output from {op}")
        out = Tensor(self, value)
        if self.record:
            self.records.append(
                _Record(op, tuple(t.id for t in inputs), out.id, backward, value.shape)
            )
        return out


def _as2d(value, dtype) -> np.ndarray:
    a = np.asarray(value, dtype=dtype)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


def _tape_of(*ts: Tensor) -> Tape:
    tape = ts[0].tape
    for t in ts[1:]:
        if t.tape is not tape:
            raise ValueError("tensors belong to different tapes")
    return tape


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- dense ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.value, b.value
    return _tape_of(a, b)._emit(
        "matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g)
    )


def transpose(a: Tensor) -> Tensor:
    return a.tape._emit("transpose", (a,), a.value.T, lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _tape_of(a, b)._emit("add", (a, b), a.value + b.value, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _tape_of(a, b)._emit("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def add_row(a: Tensor, row: Tensor) -> Tensor:
    """``a + row`` with ``row`` (1 x n) broadcast over the rows of ``a``."""
    if row.shape[0] != 1 or row.shape[1] != a.shape[1]:
        raise ShapeError(f"add_row: shapes {a.shape} and {row.shape} are incompatible")
    return _tape_of(a, row)._emit(
        "add_row", (a, row), a.value + row.value,
        lambda g: (g, g.sum(axis=0, keepdims=True)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return a.tape._emit("scale", (a,), a.value * c, lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _tape_of(a, b)._emit("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return a.tape._emit("relu", (a,), a.value * mask, lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.value)
    return a.tape._emit("sigmoid", (a,), s, lambda g: (g * s * (1 - s),))


def log_sigmoid(a: Tensor) -> Tensor:
    """Numerically stable ``log(sigmoid(a))``."""
    x = a.value
    out = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)
    return a.tape._emit("log_sigmoid", (a,), out, lambda g: (g * (1 - s),))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: shapes {a.shape} and {b.shape} differ in rows")
    k = a.shape[1]
    return _tape_of(a, b)._emit(
        "concat_cols", (a, b), np.concatenate([a.value, b.value], axis=1),
        lambda g: (g[:, :k], g[:, k:]),
    )


def concat_rows(*ts: Tensor) -> Tensor:
    cols = {t.shape[1] for t in ts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts {sorted(cols)} differ")
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])
    return _tape_of(*ts)._emit(
        "concat_rows", ts, np.concatenate([t.value for t in ts], axis=0),
        lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts))),
    )


def gather(a: Tensor, index) -> Tensor:
    """Rows ``a[index]``; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.intp)
    n = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"gather: index out of range for {n} rows")

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return (out,)

    return a.tape._emit("gather", (a,), a.value[index], back)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity, shape ``m x 1``.

    ``b`` may be a single row, broadcast against every row of ``a``.
    Raises ``ValueError`` if any row has norm below ``COSINE_EPS``.
    """
    if a.shape[1] != b.shape[1] or b.shape[0] not in (1, a.shape[0]):
        raise ShapeError(f"cosine: shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.value, b.value
    na = np.sqrt((av * av).sum(axis=1, keepdims=True))
    nb = np.sqrt((bv * bv).sum(axis=1, keepdims=True))
    if na.min() < COSINE_EPS or nb.min() < COSINE_EPS:
        raise ValueError("cosine of a zero vector")
    dot = (av * bv).sum(axis=1, keepdims=True)
    c = dot / (na * nb)

    def back(g):
        ga = g * (bv / (na * nb) - c * av / (na * na))
        gb = g * (av / (na * nb) - c * bv / (nb * nb))
        if bv.shape[0] == 1 and av.shape[0] != 1:
            gb = gb.sum(axis=0, keepdims=True)
        return ga, gb

    return _tape_of(a, b)._emit("cosine", (a, b), c, back)


def sum_all(a: Tensor) -> Tensor:
    shape, dtype = a.value.shape, a.value.dtype
    total = np.array([[a.value.sum()]], dtype=dtype)
    return a.tape._emit("sum", (a,), total, lambda g: (np.full(shape, g[0, 0], dtype=dtype),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.value.size)


def sum_sq(a: Tensor) -> Tensor:
    av = a.value
    total = np.array([[np.sum(av * av)]], dtype=av.dtype)
    return a.tape._emit("sum_sq", (a,), total, lambda g: (2 * g[0, 0] * av,))


def sparse_matmul(adj: sp.csr_matrix, x: Tensor) -> Tensor:
    """``adj @ x`` for a constant sparse matrix (symmetric or not)."""
    if adj.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_matmul: shapes {adj.shape} and {x.shape} are incompatible")
    out = np.asarray(adj @ x.value)
    return x.tape._emit("sparse_matmul", (x,), out, lambda g: (np.asarray(adj.T @ g),))


# ------------------------------------------------------------------ backward


def backward(tape: Tape, loss: Tensor) -> dict:
    """Return ``{param id: gradient}`` for every param leaf on ``tape``."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.record:
        raise ValueError("tape was created with record=False")
    grads = {loss.id: np.ones((1, 1), dtype=loss.value.dtype)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output, None)
        if g is None:
            continue
        for i, gi in zip(rec.inputs, rec.backward(g)):
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi
    return {
        pid: grads.get(pid, np.zeros_like(p.value)) for pid, p in tape.params.items()
    }


# ---------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    errors: dict
    tol: float
    passed: bool
    worst: Optional[str]

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        lines = [f"{name:<12} {err:.3e}" for name, err in self.errors.items()]
        verdict = "PASS" if self.passed else f"FAIL (worst: {self.worst})"
        lines.append(f"max relative error {self.max_error:.3e} tol {self.tol:.1e} {verdict}")
        return "\n".join(lines)


def grad_check(f, params: dict, h: float = 1e-4, tol: float = 1e-4,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``f(tape, leaves) -> scalar Tensor`` builds the program on a fresh float64
    tape, where ``leaves`` maps each name in ``params`` to a param leaf.
    Per element the error is ``|a - n| / max(|a|, |n|, floor)``; a
    parameter's error is the maximum over its elements. ``tol=0`` always
    fails.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def run(values, record):
        tape = Tape(dtype=np.float64, record=record)
        leaves = {k: tape.param(v, name=k) for k, v in values.items()}
        return tape, leaves, f(tape, leaves)

    tape, leaves, loss = run(params, True)
    grads = backward(tape, loss)
    errors = {}
    for name, base in params.items():
        analytic = grads[leaves[name].id]
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            probe = dict(params)
            up = base.copy()
            up[idx] += h
            probe[name] = up
            f_up = run(probe, False)[2].value[0, 0]
            down = base.copy()
            down[idx] -= h
            probe[name] = down
            f_down = run(probe, False)[2].value[0, 0]
            numeric[idx] = (f_up - f_down) / (2 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        errors[name] = float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
    worst = max(errors, key=errors.get) if errors else None
    passed = bool(errors) and all(e < tol for e in errors.values())
    return GradCheckReport(errors, tol, passed, worst)
