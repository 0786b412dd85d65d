"""Pairwise training: BPR loss, logic/vector/weight regularisers, Adam."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .data import DataError, SplitDataset, sample_train_negatives
from .evaluate import eval_inputs, evaluate
from .graph import ItemGraph, normalize
from .model import (ModelParams, bind, expression_vectors, fold_histories, gnn_forward,
                    init_params, live_rows, logic_regularizer, similarity)

log = logging.getLogger(__name__)

# rng streams derived from the single run seed
STREAM_INIT, STREAM_TRAIN = 0, 1

LOG_COLUMNS = ("epoch", "train_loss", "bpr", "l_logic", "vec_reg", "theta_reg",
               "valid_ndcg@10", "valid_hit@10")


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 128
    max_epochs: int = 200
    d: int = 64
    gnn_layers: int = 2
    variant: str = "gcn"
    phi: float = 10.0
    max_history: int = 5
    lambda_logic: float = 1e-5
    lambda_vec: float = 1e-4
    lambda_theta: float = 1e-4
    patience: int = 20
    seed: int = 0
    shuffle_literals: bool = True
    eval_negatives: int = 100
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("lr", "lambda_logic", "lambda_vec", "lambda_theta", "phi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.patience < 0 or self.gnn_layers < 0:
            raise ValueError("max_epochs, patience and gnn_layers must be >= 0")
        if self.max_history < 1:
            raise ValueError("max_history must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}

    def as_dict(self) -> dict:
        return asdict(self)


# -------------------------------------------------------------------- losses


def bpr_loss(p_pos: ad.Tensor, p_neg: ad.Tensor) -> ad.Tensor:
    """``-sum log sigmoid(p_pos - p_neg)`` over the batch."""
    return ad.scale(ad.sum_all(ad.log_sigmoid(ad.sub(p_pos, p_neg))), -1.0)


@dataclass
class LossParts:
    total: ad.Tensor
    bpr: ad.Tensor
    l_logic: ad.Tensor
    vec_reg: ad.Tensor
    theta_reg: ad.Tensor

    def values(self) -> dict:
        return {k: float(getattr(self, k).value[0, 0])
                for k in ("total", "bpr", "l_logic", "vec_reg", "theta_reg")}


def total_loss(bpr: ad.Tensor, l_logic: ad.Tensor, vectors: ad.Tensor, w,
               config: TrainConfig) -> LossParts:
    """BPR plus weighted logic, vector-length and weight-norm penalties.

    The weight-norm term covers every trainable weight matrix (GNN layers
    and NOT/OR matrices); embedding rows are covered by the vector term.
    """
    tape = bpr.tape
    vec = ad.sum_sq(vectors) if vectors is not None else tape.constant(0.0)
    theta = tape.constant(0.0)
    for name in w.params.weight_names():
        theta = ad.add(theta, ad.sum_sq(w[name]))
    total = ad.add(bpr, ad.scale(l_logic, config.lambda_logic))
    total = ad.add(total, ad.scale(vec, config.lambda_vec))
    total = ad.add(total, ad.scale(theta, config.lambda_theta))
    return LossParts(total, bpr, l_logic, vec, theta)


# ---------------------------------------------------------------------- adam


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, arrays: dict) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()})


def adam_step(state: AdamState, params: dict, grads: dict, lr: float):
    """Bias-corrected Adam update of ``params`` (name -> array), in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name].reshape(p.shape)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params


# ------------------------------------------------------------------ examples


@dataclass
class Examples:
    """Training examples grouped by (distinct, capped) history length."""

    users: np.ndarray
    hist: list  # per example tuple of item indices
    targets: np.ndarray

    def __len__(self):
        return len(self.targets)


def training_examples(split: SplitDataset, max_history: int) -> Examples:
    """One example per training positive with a non-empty preceding history.

    History is the ``max_history`` most recent earlier positives, deduped in
    first-occurrence order. Examples whose target is in that history are
    dropped.
    """
    users, hists, targets = [], [], []
    for h in split.train:
        pos = h.positives()
        for t in range(1, len(pos)):
            hist = tuple(dict.fromkeys(pos[max(0, t - max_history):t]))
            if pos[t] in hist:
                continue
            users.append(h.user_index)
            hists.append(hist)
            targets.append(pos[t])
    return Examples(np.array(users, dtype=np.intp), hists, np.array(targets, dtype=np.intp))


def batch_loss(w, M, hists, pos, neg, config: TrainConfig,
               rng: np.random.Generator = None) -> LossParts:
    """Full loss for one batch, recorded on the tape of the bound params ``w``.

    ``hists[r]`` is the history tuple of example ``r``; ``pos``/``neg`` its
    positive and sampled negative item. Pairs where either expression vector
    is exactly zero have no defined cosine and are left out of the BPR sum.
    """
    X = gnn_forward(w, M)
    lengths = np.array([len(h) for h in hists])
    items = np.unique(np.concatenate([np.concatenate([np.asarray(h, dtype=np.intp) for h in hists]),
                                      pos, neg]))
    vectors = [ad.gather(X, items)]
    bpr = None
    for k in np.unique(lengths):
        rows = np.flatnonzero(lengths == k)
        H = np.array([hists[r] for r in rows], dtype=np.intp).reshape(len(rows), k)
        if config.shuffle_literals and k > 1:
            H = rng.permuted(H, axis=1)
        acc = fold_histories(w, X, H, collect=vectors)
        e_pos = expression_vectors(w, X, acc, pos[rows])
        e_neg = expression_vectors(w, X, acc, neg[rows])
        vectors += [e_pos, e_neg]
        live = live_rows(e_pos.value) & live_rows(e_neg.value)
        if not live.all():
            if not live.any():
                continue
            keep = np.flatnonzero(live)
            e_pos, e_neg = ad.gather(e_pos, keep), ad.gather(e_neg, keep)
        part = bpr_loss(similarity(e_pos, w.T, w.phi), similarity(e_neg, w.T, w.phi))
        bpr = part if bpr is None else ad.add(bpr, part)
    if bpr is None:
        bpr = w.tape.constant(0.0)
    V = ad.concat_rows(*vectors)
    l_logic = logic_regularizer(w, V)
    return total_loss(bpr, l_logic, V, w, config)


# ----------------------------------------------------------------------- fit


@dataclass
class TrainResult:
    params: ModelParams
    log: list = field(default_factory=list)  # dict rows, see LOG_COLUMNS
    timings: list = field(default_factory=list)  # seconds per epoch
    best_epoch: int = 0
    best_ndcg: float = float("-inf")


def format_log(rows) -> str:
    lines = ["\t".join(LOG_COLUMNS)]
    for r in rows:
        lines.append("\t".join([str(r["epoch"])] + [f"{r[c]:.6f}" for c in LOG_COLUMNS[1:]]))
    return "\n".join(lines) + "\n"


def fit(config: TrainConfig, split: SplitDataset, graph: ItemGraph,
        params: ModelParams = None, on_epoch=None) -> TrainResult:
    """Train with early stopping on validation N@10.

    ``params`` resumes from existing parameters; with ``max_epochs == 0`` they
    are returned unchanged. ``on_epoch(row)`` is called after every epoch.
    """
    dtype = np.dtype(config.dtype).type
    examples = training_examples(split, config.max_history)
    if len(examples) == 0:
        raise DataError("no training examples")
    if params is None:
        params = init_params(split.n_items, config.d, config.gnn_layers, config.variant,
                             np.random.default_rng([config.seed, STREAM_INIT]),
                             phi=config.phi, dtype=dtype)
    params.meta.update(max_history=config.max_history, seed=config.seed)
    M = normalize(graph).matrix(dtype)
    rng = np.random.default_rng([config.seed, STREAM_TRAIN])
    state = AdamState.for_params(params.trainable())
    valid_inputs = eval_inputs(split, "valid", config.eval_negatives, config.seed,
                               config.max_history)
    result = TrainResult(params.copy())
    stagnant = 0
    n = len(examples)
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        sums = dict.fromkeys(("total", "bpr", "l_logic", "vec_reg", "theta_reg"), 0.0)
        n_batches = 0
        for b in range(0, n, config.batch_size):
            idx = order[b:b + config.batch_size]
            users = examples.users[idx]
            neg = sample_train_negatives(split, users, rng)
            w = bind(params)
            parts = batch_loss(w, M, [examples.hist[i] for i in idx],
                               examples.targets[idx], neg, config, rng)
            grads = ad.backward(w.tape, parts.total)
            named = {name: grads[leaf.id] for name, leaf in w.leaves.items()}
            adam_step(state, params.trainable(), named, config.lr)
            for k, v in parts.values().items():
                sums[k] += v
            n_batches += 1
        valid = evaluate(params, M, split, "valid", config.eval_negatives, ks=(10,),
                         seed=config.seed, max_history=config.max_history,
                         inputs=valid_inputs)
        hit, ndcg = valid.metrics[10]
        row = {"epoch": epoch, "train_loss": sums["total"] / n_batches,
               "bpr": sums["bpr"] / n_batches, "l_logic": sums["l_logic"] / n_batches,
               "vec_reg": sums["vec_reg"] / n_batches,
               "theta_reg": sums["theta_reg"] / n_batches,
               "valid_ndcg@10": ndcg, "valid_hit@10": hit}
        result.log.append(row)
        result.timings.append(time.perf_counter() - start)
        log.info("epoch %d loss %.4f valid N@10 %.4f H@10 %.4f (%.1fs)", epoch,
                 row["train_loss"], ndcg, hit, result.timings[-1])
        if on_epoch is not None:
            on_epoch(row)
        if ndcg > result.best_ndcg:
            result.best_ndcg, result.best_epoch = ndcg, epoch
            result.params = params.copy()
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= max(config.patience, 1):
                break
    return result
