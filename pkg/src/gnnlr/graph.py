"""Weighted item-item graph built from adjacent pairs in user histories."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class ItemGraph:
    n_nodes: int
    edges: tuple  # ((i, j, weight), ...) with i < j, sorted
    degree_hat: np.ndarray  # 1 + weighted degree

    def weight(self, i: int, j: int) -> int:
        i, j = min(i, j), max(i, j)
        for a, b, w in self.edges:
            if (a, b) == (i, j):
                return w
        return 0

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency ``A`` without self-loops."""
        if not self.edges:
            return sp.csr_matrix((self.n_nodes, self.n_nodes))
        e = np.array(self.edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        w = np.concatenate([e[:, 2], e[:, 2]]).astype(np.float64)
        return sp.csr_matrix((w, (rows, cols)), shape=(self.n_nodes, self.n_nodes))


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Coefficients ``e_ji / sqrt(d_j d_i)`` plus ``1 / d_i`` self entries."""

    src: np.ndarray
    dst: np.ndarray
    coef: np.ndarray
    n_nodes: int

    def matrix(self, dtype=np.float64) -> sp.csr_matrix:
        """CSR matrix ``M`` with ``M[dst, src] = coef`` so that ``X' = M @ X``."""
        return sp.csr_matrix(
            (self.coef.astype(dtype), (self.dst, self.src)),
            shape=(self.n_nodes, self.n_nodes),
        )


def adjacent_pairs(sequence):
    for a, b in zip(sequence, sequence[1:]):
        if a != b:
            yield (a, b) if a < b else (b, a)


def build_item_graph(sequences, n_nodes: int) -> ItemGraph:
    """Count adjacent (consecutive, distinct) item pairs over all sequences.

    ``sequences`` is an iterable of item-index lists in time order; pass the
    training event items of each user.
    """
    counts = Counter()
    for seq in sequences:
        seq = list(seq)
        if seq and max(seq) >= n_nodes:
            raise IndexError(f"item index {max(seq)} >= n_nodes {n_nodes}")
        counts.update(adjacent_pairs(seq))
    edges = tuple(sorted((i, j, w) for (i, j), w in counts.items()))
    deg = np.ones(n_nodes, dtype=np.float64)
    for i, j, w in edges:
        deg[i] += w
        deg[j] += w
    return ItemGraph(n_nodes, edges, deg)


def graph_from_split(split) -> ItemGraph:
    return build_item_graph(([e.item for e in h.events] for h in split.train), split.n_items)


def normalize(graph: ItemGraph) -> NormalizedAdjacency:
    d = graph.degree_hat
    n = graph.n_nodes
    if graph.edges:
        e = np.array(graph.edges, dtype=np.int64)
        i, j, w = e[:, 0], e[:, 1], e[:, 2].astype(np.float64)
    else:
        i = j = np.zeros(0, dtype=np.int64)
        w = np.zeros(0)
    c = w / np.sqrt(d[i] * d[j])
    nodes = np.arange(n)
    src = np.concatenate([i, j, nodes])
    dst = np.concatenate([j, i, nodes])
    coef = np.concatenate([c, c, 1.0 / d])
    return NormalizedAdjacency(src, dst, coef, n)


def graph_stats(graph: ItemGraph):
    """``(n_nodes, n_edges, density)`` with density over unordered pairs."""
    n, m = graph.n_nodes, len(graph.edges)
    density = 2.0 * m / (n * (n - 1)) if n > 1 else 0.0
    return n, m, density


def write_graph_tsv(graph: ItemGraph, path):
    """One ``i<TAB>j<TAB>weight`` line per edge (dense indices, ``i < j``, sorted)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for i, j, w in graph.edges:
            fh.write(f"{i}\t{j}\t{w}\n")


def read_graph_tsv(path, n_nodes: int) -> ItemGraph:
    edges = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                i, j, w = (int(x) for x in line.split("\t"))
                edges.append((i, j, w))
    deg = np.ones(n_nodes)
    for i, j, w in edges:
        deg[i] += w
        deg[j] += w
    return ItemGraph(n_nodes, tuple(sorted(edges)), deg)
