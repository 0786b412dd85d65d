"""
Building the item graph
=======================

Two users watched ``v1 -> v4 -> v3`` and ``v2 -> v4 -> v3``. Every pair of
consecutive items becomes an undirected edge, and repeated pairs add up.
"""

import numpy as np

from gnnlr.graph import build_item_graph, graph_stats, normalize

# items v1..v4 live at indices 0..3
names = ["v1", "v2", "v3", "v4"]
sequences = [[0, 3, 2], [1, 3, 2]]
g = build_item_graph(sequences, n_nodes=4)

for i, j, w in g.edges:
    print(f"{names[i]} -- {names[j]}  weight {w}")

# the v4-v3 pair occurs for both users, so its weight is 2
print("degree with self-loop:", dict(zip(names, g.degree_hat.tolist())))

###############################################################################
# Symmetric normalisation
# -----------------------
# Each edge is scaled by 1/sqrt(d_i d_j) where d counts the self-loop too.
# Isolated items keep only their self-loop and pass their vector through.

M = normalize(g).matrix(np.float64).toarray()
np.set_printoptions(precision=4, suppress=True)
print(M)
print("v4 -> v3 coefficient:", round(M[3, 2], 4), "= 2/sqrt(15)")

n, m, density = graph_stats(g)
print(f"{n} nodes, {m} edges, density {density:.3f}")
