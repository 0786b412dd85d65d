"""Parameters, graph propagation, neural NOT/OR modules and scoring.

Item vectors are first propagated over the normalized item graph, then each
Horn clause is evaluated by folding the OR module left to right over the
NOT-ed history vectors and finally the candidate vector. The resulting
expression vector is scored by a scaled, sigmoid-squashed cosine against a
fixed truth anchor ``T``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import NormalizedAdjacency
from .logic import LogicExpression, compile_prediction_expression

VARIANTS = ("gcn", "lightgcn", "none")
MLP_NAMES = ("not_W1", "not_b1", "not_W2", "not_b2", "or_W1", "or_b1", "or_W2", "or_b2")
MAGIC = b"GNNLRCK1"


@dataclass
class ModelParams:
    """All model arrays. Weight matrices are stored ``out x in``."""

    E: np.ndarray
    thetas: list
    not_W1: np.ndarray
    not_b1: np.ndarray
    not_W2: np.ndarray
    not_b2: np.ndarray
    or_W1: np.ndarray
    or_b1: np.ndarray
    or_W2: np.ndarray
    or_b2: np.ndarray
    T: np.ndarray
    phi: float = 10.0
    variant: str = "gcn"
    layers: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.E.shape[1]

    @property
    def n_items(self) -> int:
        return self.E.shape[0]

    @property
    def n_layers(self) -> int:
        """Propagation rounds; ``gcn`` has one Θ per round, ``lightgcn`` none."""
        return self.layers

    def trainable(self) -> dict:
        """Name -> array for every trainable array, in checkpoint order."""
        out = {"E": self.E}
        for l, th in enumerate(self.thetas):
            out[f"theta{l}"] = th
        for name in MLP_NAMES:
            out[name] = getattr(self, name)
        return out

    def weight_names(self) -> list:
        """Trainable weight matrices (no biases, no embedding table)."""
        return [n for n in self.trainable() if n.startswith("theta") or "_W" in n]

    def set(self, name: str, value: np.ndarray):
        if name.startswith("theta"):
            self.thetas[int(name[5:])] = value
        else:
            setattr(self, name, value)

    def copy(self) -> "ModelParams":
        arrays = {k: v.copy() for k, v in self.trainable().items()}
        return self.replace(arrays)

    def replace(self, arrays: dict) -> "ModelParams":
        thetas = [arrays[f"theta{l}"] for l in range(len(self.thetas))]
        mlp = {n: arrays[n] for n in MLP_NAMES}
        return ModelParams(arrays["E"], thetas, T=self.T.copy(), phi=self.phi,
                           variant=self.variant, layers=self.layers,
                           meta=dict(self.meta), **mlp)

    def astype(self, dtype) -> "ModelParams":
        p = self.replace({k: v.astype(dtype) for k, v in self.trainable().items()})
        p.T = self.T.astype(dtype)
        return p


def _glorot(rng, fan_out, fan_in, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


def init_params(n_items: int, d: int = 64, n_layers: int = 2, variant: str = "gcn",
                rng: np.random.Generator = None, phi: float = 10.0,
                dtype=np.float32, emb_std: float = 0.01) -> ModelParams:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if d < 1 or n_layers < 0 or n_items < 1:
        raise ValueError("need d >= 1, n_layers >= 0, n_items >= 1")
    if variant == "none":
        n_layers = 0
    rng = np.random.default_rng(0) if rng is None else rng
    E = (rng.standard_normal((n_items, d)) * emb_std).astype(dtype)
    thetas = [_glorot(rng, d, d, dtype) for _ in range(n_layers if variant == "gcn" else 0)]
    mlp = {
        "not_W1": _glorot(rng, d, d, dtype), "not_b1": np.zeros(d, dtype),
        "not_W2": _glorot(rng, d, d, dtype), "not_b2": np.zeros(d, dtype),
        "or_W1": _glorot(rng, d, 2 * d, dtype), "or_b1": np.zeros(d, dtype),
        "or_W2": _glorot(rng, d, d, dtype), "or_b2": np.zeros(d, dtype),
    }
    T = rng.standard_normal(d)
    T = (T / np.linalg.norm(T)).astype(dtype)
    return ModelParams(E, thetas, T=T, phi=phi, variant=variant, layers=n_layers, **mlp)


class Bound:
    """Model arrays placed on a tape: trainable arrays as params, ``T`` constant."""

    def __init__(self, params: ModelParams, tape: ad.Tape, trainable: bool = True,
                 leaves: dict = None):
        self.params = params
        self.tape = tape
        if leaves is None:
            make = tape.param if trainable else tape.constant
            leaves = {k: make(v, name=k) for k, v in params.trainable().items()}
        self.leaves = leaves
        self.T = tape.constant(params.T, name="T")
        self.phi = params.phi
        self.variant = params.variant

    def __getitem__(self, name) -> ad.Tensor:
        return self.leaves[name]

    @property
    def thetas(self):
        return [self.leaves[f"theta{l}"] for l in range(len(self.params.thetas))]

    @property
    def n_layers(self) -> int:
        return self.params.n_layers


def bind(params: ModelParams, tape: ad.Tape = None, trainable: bool = True) -> Bound:
    if tape is None:
        tape = ad.Tape(dtype=params.E.dtype.type, record=trainable)
    return Bound(params, tape, trainable)


def as_matrix(adj, dtype) -> sp.csr_matrix:
    if isinstance(adj, NormalizedAdjacency):
        return adj.matrix(dtype)
    return adj.astype(dtype) if adj.dtype != dtype else adj


def gnn_forward(w: Bound, adj) -> ad.Tensor:
    """Propagated item vectors (``N x d``) for the model's variant."""
    X = w["E"]
    if w.variant == "none" or w.n_layers == 0:
        return X
    M = as_matrix(adj, X.value.dtype)
    if M.shape[0] != X.shape[0]:
        raise ad.ShapeError(f"adjacency over {M.shape[0]} nodes, embeddings over {X.shape[0]}")
    if w.variant == "gcn":
        for theta in w.thetas:
            X = ad.relu(ad.matmul(ad.sparse_matmul(M, X), theta))
        return X
    # lightgcn: plain propagation, mean over layer outputs 0..L
    layers = [X]
    for _ in range(w.n_layers):
        X = ad.sparse_matmul(M, X)
        layers.append(X)
    total = layers[0]
    for x in layers[1:]:
        total = ad.add(total, x)
    return ad.scale(total, 1.0 / len(layers))


def linear(x: ad.Tensor, W: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.add_row(ad.matmul(x, ad.transpose(W)), b)


def not_op(w: Bound, x: ad.Tensor) -> ad.Tensor:
    """NOT module, applied to every row of ``x``."""
    h = ad.relu(linear(x, w["not_W1"], w["not_b1"]))
    return linear(h, w["not_W2"], w["not_b2"])


def or_op(w: Bound, a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """OR module on the row-wise concatenation ``[a, b]``."""
    h = ad.relu(linear(ad.concat_cols(a, b), w["or_W1"], w["or_b1"]))
    return linear(h, w["or_W2"], w["or_b2"])


def similarity(e: ad.Tensor, T: ad.Tensor, phi: float) -> ad.Tensor:
    """``sigmoid(phi * cos(e, T))`` per row, shape ``m x 1``."""
    return ad.sigmoid(ad.scale(ad.cosine(e, T), phi))


NEUTRAL_SCORE = 0.5  # sigmoid(0): score given to an all-zero expression vector


def live_rows(values: np.ndarray) -> np.ndarray:
    """Mask of rows with a usable (non-zero) norm."""
    return np.sqrt((values * values).sum(axis=1)) >= ad.COSINE_EPS


def scores_of(e: ad.Tensor, T: ad.Tensor, phi: float) -> np.ndarray:
    """Forward-only similarity; all-zero rows get :data:`NEUTRAL_SCORE`.

    An exactly zero expression vector happens when every hidden unit of the
    last OR is inactive while its output bias is still zero.
    """
    live = live_rows(e.value)
    out = np.full(e.shape[0], NEUTRAL_SCORE, dtype=e.value.dtype)
    if live.any():
        rows = e if live.all() else ad.gather(e, np.flatnonzero(live))
        out[live] = similarity(rows, T, phi).value[:, 0]
    return out


def eval_expression(w: Bound, expr: LogicExpression, X: ad.Tensor,
                    shuffle: bool = False, rng: np.random.Generator = None) -> ad.Tensor:
    """Expression vector (``1 x d``) by left fold of OR over the literals."""
    lits = list(expr.literals)
    if not lits:
        raise ValueError("empty expression")
    if shuffle and len(lits) > 2:
        head = lits[:-1]
        order = rng.permutation(len(head))
        lits = [head[k] for k in order] + [lits[-1]]
    acc = None
    for lit in lits:
        x = ad.gather(X, [lit.item])
        if lit.negated:
            x = not_op(w, x)
        acc = x if acc is None else or_op(w, acc, x)
    return acc


def fold_histories(w: Bound, X: ad.Tensor, hist: np.ndarray, collect=None):
    """NOT each history column and OR-fold them; ``hist`` is ``B x k``.

    Returns the ``B x d`` accumulator, or None for ``k == 0``. Every
    intermediate NOT/OR output is appended to ``collect`` when given.
    """
    acc = None
    for p in range(hist.shape[1]):
        neg = not_op(w, ad.gather(X, hist[:, p]))
        if collect is not None:
            collect.append(neg)
        if acc is None:
            acc = neg
        else:
            acc = or_op(w, acc, neg)
            if collect is not None:
                collect.append(acc)
    return acc


def expression_vectors(w: Bound, X: ad.Tensor, acc, items: np.ndarray) -> ad.Tensor:
    """Close each folded history with its candidate item (``OR(acc, x)``)."""
    x = ad.gather(X, items)
    return x if acc is None else or_op(w, acc, x)


def predict_score(params: ModelParams, adj, history, candidate: int,
                  max_history: int = None) -> float:
    """Truth degree in (0, 1) of ``¬h1 ∨ ... ∨ candidate``."""
    w = bind(params, trainable=False)
    X = gnn_forward(w, adj)
    expr = compile_prediction_expression(history, candidate, max_history)
    e = eval_expression(w, expr, X)
    return float(scores_of(e, w.T, w.phi)[0])


def propagate(params: ModelParams, adj) -> np.ndarray:
    """Forward-only :func:`gnn_forward`, as a plain array."""
    w = bind(params, trainable=False)
    return gnn_forward(w, adj).value


def score_candidates(params: ModelParams, X: np.ndarray, histories: np.ndarray,
                     candidates: np.ndarray) -> np.ndarray:
    """Scores for ``U`` users sharing a history length ``k``.

    ``histories`` is ``U x k`` (already deduped, capped), ``candidates`` is
    ``U x C``; returns ``U x C`` scores. No tape is recorded.
    """
    tape = ad.Tape(dtype=X.dtype.type, record=False)
    w = Bound(params, tape, trainable=False)
    Xt = tape.constant(X)
    U, C = candidates.shape
    acc = fold_histories(w, Xt, histories)
    if acc is not None:
        acc = ad.gather(acc, np.repeat(np.arange(U), C))
    e = expression_vectors(w, Xt, acc, candidates.ravel())
    return scores_of(e, w.T, w.phi).reshape(U, C)


def nonzero_rows(V: ad.Tensor) -> ad.Tensor:
    keep = np.flatnonzero(live_rows(V.value))
    return V if keep.size == V.shape[0] else ad.gather(V, keep)


def logic_regularizer(w: Bound, V: ad.Tensor) -> ad.Tensor:
    """Mean over rows ``v`` of the summed logic-law penalties.

    Laws: double negation, negation, idempotence, annihilator (v ∨ T = T),
    identity (v ∨ F = v, F = NOT(T)) and excluded middle (v ∨ ¬v = T).
    Rows where ``v`` or any module output compared by cosine is exactly zero
    are skipped, since cosine is undefined for them.
    """
    V = nonzero_rows(V)
    m = V.shape[0]
    T = w.T
    zeros = np.zeros(m, dtype=np.intp)
    Tm = ad.gather(T, zeros)
    F = ad.gather(not_op(w, T), zeros)
    nv = not_op(w, V)
    # (left operand, right operand, sign): penalty is 1 - sign * cos
    laws = [
        (not_op(w, nv), V, 1.0),
        (nv, V, -1.0),
        (or_op(w, V, V), V, 1.0),
        (or_op(w, V, Tm), T, 1.0),
        (or_op(w, V, F), V, 1.0),
        (or_op(w, V, nv), T, 1.0),
    ]
    live = np.ones(m, dtype=bool)
    for left, _, _ in laws:
        live &= live_rows(left.value)
    if not live.any():
        return w.tape.constant(0.0)
    keep = None if live.all() else np.flatnonzero(live)
    total = None
    for left, right, sign in laws:
        if keep is not None:
            left = ad.gather(left, keep)
            right = right if right is T else ad.gather(right, keep)
        term = ad.scale(ad.cosine(left, right), -sign)
        total = term if total is None else ad.add(total, term)
    # five "1 - cos" laws and one "1 + cos" law -> +6 per row
    return ad.add(ad.mean_all(total), w.tape.constant(6.0))


# -------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: ModelParams, meta: dict = None):
    """Write ``GNNLRCK1`` + u32 metadata length + metadata + float32 LE arrays.

    Array order: E, theta0..theta{L-1}, not_W1, not_b1, not_W2, not_b2,
    or_W1, or_b1, or_W2, or_b2, T. Shapes are recoverable from the metadata.
    """
    info = dict(params.meta)
    info.update(meta or {})
    info.update(d=params.d, L=params.n_layers, variant=params.variant,
                phi=repr(float(params.phi)), N=params.n_items)
    text = "".join(f"{k}={info[k]}\n" for k in sorted(info)).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for arr in list(params.trainable().values()) + [params.T]:
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a GNNLR checkpoint")
    (n,) = struct.unpack("<I", data[8:12])
    meta = {}
    for line in data[12:12 + n].decode("utf-8").splitlines():
        k, _, v = line.partition("=")
        meta[k] = v
    d, L, N = int(meta["d"]), int(meta["L"]), int(meta["N"])
    n_theta = L if meta["variant"] == "gcn" else 0
    shapes = [("E", (N, d))] + [(f"theta{l}", (d, d)) for l in range(n_theta)] + [
        ("not_W1", (d, d)), ("not_b1", (d,)), ("not_W2", (d, d)), ("not_b2", (d,)),
        ("or_W1", (d, 2 * d)), ("or_b1", (d,)), ("or_W2", (d, d)), ("or_b2", (d,)),
        ("T", (d,)),
    ]
    arrays, off = {}, 12 + n
    for name, shape in shapes:
        size = int(np.prod(shape)) * 4
        arrays[name] = np.frombuffer(data[off:off + size], dtype="<f4").reshape(shape).astype(np.float32)
        off += size
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    thetas = [arrays.pop(f"theta{l}") for l in range(n_theta)]
    T = arrays.pop("T")
    E = arrays.pop("E")
    variant, phi = meta.pop("variant"), float(meta.pop("phi"))
    for k in ("d", "L", "N"):
        meta.pop(k)
    return ModelParams(E, thetas, T=T, phi=phi, variant=variant, layers=L, meta=meta, **arrays)
