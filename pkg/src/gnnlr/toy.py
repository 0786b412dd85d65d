"""Small synthetic datasets and the toy gradient-check problem."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import Interaction, build_histories, leave_one_out_split
from .graph import build_item_graph, graph_from_split, normalize
from .model import Bound, init_params
from .train import TrainConfig, batch_loss


def synthetic_interactions(n_users: int, n_items: int, per_user: int, seed: int = 0,
                           p_positive: float = 0.8, structured: bool = True) -> list:
    """Random ratings; with ``structured`` each user walks through items in
    small strides so consecutive items co-occur across users."""
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(n_users):
        start = int(rng.integers(n_items))
        step = int(rng.integers(1, 3)) if structured else 0
        seen = set()
        for t in range(per_user):
            if structured:
                v = (start + t * step) % n_items
            else:
                v = int(rng.integers(n_items))
            if v in seen:
                continue
            seen.add(v)
            rating = 5.0 if rng.random() < p_positive else 2.0
            rows.append(Interaction(f"u{u}", f"i{v}", rating, 1000 * u + t))
    return rows


def synthetic_split(n_users: int = 8, n_items: int = 6, per_user: int = 6, seed: int = 0,
                    **kw):
    rows = synthetic_interactions(n_users, n_items, per_user, seed, **kw)
    histories, ids = build_histories(rows)
    split = leave_one_out_split(histories, len(ids.items), ids=ids)
    return rows, split, graph_from_split(split)


def gradcheck_problem(n_items: int = 6, d: int = 8, seed: int = 0, variant: str = "gcn",
                      layers: int = 2):
    """Float64 model plus a 3-example batch exercising every loss term.

    Embeddings are unit scale and biases non-zero: central differences with
    ``h = 1e-4`` are only meaningful when ``h`` is small against the
    parameters, and zero biases would leave some bias gradients untested.
    Returns ``(params, f)`` where ``f(tape, leaves)`` is the scalar loss.
    """
    if n_items < 5:
        raise ValueError("need at least 5 items")
    rng = np.random.default_rng(seed)
    seqs = [list(rng.permutation(n_items)[:4]) for _ in range(4)]
    graph = build_item_graph(seqs, n_items)
    params = init_params(n_items, d, layers, variant, rng, dtype=np.float64, emb_std=1.0)
    for name in ("not_b1", "not_b2", "or_b1", "or_b2"):
        setattr(params, name, rng.normal(size=d) * 0.1)
    M = normalize(graph).matrix(np.float64)
    config = TrainConfig(lambda_logic=1.0, lambda_vec=0.1, lambda_theta=0.1,
                         shuffle_literals=False, dtype="float64")
    hists, pos, neg = [], [], []
    for k in (1, 2, 3):
        items = rng.permutation(n_items)
        hists.append(tuple(int(v) for v in items[:k]))
        pos.append(int(items[k]))
        neg.append(int(items[k + 1]))
    pos, neg = np.array(pos), np.array(neg)

    def f(tape: ad.Tape, leaves: dict) -> ad.Tensor:
        w = Bound(params, tape, leaves=leaves)
        return batch_loss(w, M, hists, pos, neg, config).total

    return params, f
