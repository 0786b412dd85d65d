"""Leave-one-out ranking evaluation with sampled negatives (H@K, N@K)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset, sample_eval_negatives
from .model import ModelParams, propagate, score_candidates

STREAMS = {"valid": 2, "test": 3}
EVAL_CHUNK = 256  # users scored per forward pass


@dataclass
class EvalResult:
    metrics: dict  # K -> (hit_rate, ndcg)
    n_users: int
    negatives: int
    seed: int
    ranks: np.ndarray = field(default=None, repr=False)

    def to_text(self) -> str:
        lines = [f"users={self.n_users} negatives={self.negatives} seed={self.seed}",
                 f"{'K':>4}  {'H@K':>8}  {'N@K':>8}"]
        for k in sorted(self.metrics):
            hit, ndcg = self.metrics[k]
            lines.append(f"{k:>4}  {hit:8.4f}  {ndcg:8.4f}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        """``metric@K=value`` lines; values use ``repr`` so they round-trip."""
        lines = [f"n_users={self.n_users}", f"negatives={self.negatives}", f"seed={self.seed}"]
        for k in sorted(self.metrics):
            hit, ndcg = self.metrics[k]
            lines += [f"hit@{k}={hit!r}", f"ndcg@{k}={ndcg!r}"]
        return "\n".join(lines) + "\n"


def rank_of_target(scores, target: int) -> int:
    """1-based rank of ``target`` among ``(item, score)`` pairs.

    Equal scores are ordered by ascending item index.
    """
    found = [s for item, s in scores if item == target]
    if len(found) != 1:
        raise ValueError(f"target {target} must appear exactly once")
    t = found[0]
    return 1 + sum(1 for item, s in scores if s > t or (s == t and item < target))


def metrics_at_k(rank: int, k: int):
    if rank < 1 or k < 1:
        raise ValueError("rank and k must be >= 1")
    if rank > k:
        return 0, 0.0
    return 1, 1.0 / math.log2(rank + 1)


def _ranks(scores: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rank_of_target`; column 0 holds the target."""
    s_t = scores[:, :1]
    i_t = items[:, :1]
    better = (scores > s_t) | ((scores == s_t) & (items < i_t))
    return 1 + better[:, 1:].sum(axis=1)


def eval_inputs(split: SplitDataset, which: str, negatives: int, seed: int,
                max_history: int):
    """Per evaluated user: history (deduped, target removed) and candidates.

    Candidates are ``[target] + negatives``. Negatives are drawn in ascending
    user order from a stream derived from ``seed``.
    """
    targets = {"valid": split.valid_target, "test": split.test_target}[which]
    rng = np.random.default_rng([seed, STREAMS[which]])
    users = sorted(targets)
    hists, cands = [], []
    for u in users:
        t = targets[u]
        negs = sample_eval_negatives(split, u, negatives, rng, target=t)
        hist = [v for v in dict.fromkeys(split.eval_history(u, which, max_history)) if v != t]
        hists.append(hist)
        cands.append(np.concatenate([[t], negs]))
    return users, hists, np.array(cands, dtype=np.intp).reshape(len(users), negatives + 1)


def evaluate(params: ModelParams, adj, split: SplitDataset, which: str = "test",
             negatives: int = 100, ks=(10, 20), seed: int = 0, max_history: int = 5,
             inputs=None) -> EvalResult:
    """Rank each user's held-out item against ``negatives`` sampled items."""
    if inputs is None:
        inputs = eval_inputs(split, which, negatives, seed, max_history)
    users, hists, cands = inputs
    X = propagate(params, adj)
    scores = np.empty(cands.shape, dtype=X.dtype)
    lengths = np.array([len(h) for h in hists])
    for k in np.unique(lengths):
        rows = np.flatnonzero(lengths == k)
        for c in range(0, rows.size, EVAL_CHUNK):
            r = rows[c:c + EVAL_CHUNK]
            H = np.array([hists[i] for i in r], dtype=np.intp).reshape(r.size, k)
            scores[r] = score_candidates(params, X, H, cands[r])
    ranks = _ranks(scores, cands)
    metrics = {}
    for k in ks:
        hit = ranks <= k
        ndcg = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
        metrics[k] = (float(hit.mean()) if len(users) else 0.0,
                      float(ndcg.mean()) if len(users) else 0.0)
    return EvalResult(metrics, len(users), negatives, seed, ranks)
