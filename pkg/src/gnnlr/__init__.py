"""Neural-symbolic recommendation over an item-item graph.

Item embeddings are propagated over a graph of adjacently-consumed items,
user histories are compiled into Horn clauses, and neural NOT/OR modules
evaluate those clauses against a fixed truth anchor.

Modules
-------
- :mod:`gnnlr.data`: parsing, histories, leave-one-out split, sampling
- :mod:`gnnlr.graph`: item-item graph and its normalized propagation matrix
- :mod:`gnnlr.autodiff`: tape-based reverse-mode differentiation
- :mod:`gnnlr.logic`: Horn-clause compilation and a truth-table oracle
- :mod:`gnnlr.model`: parameters, propagation, NOT/OR modules, checkpoints
- :mod:`gnnlr.train`: BPR training with logic-law regularization and Adam
- :mod:`gnnlr.evaluate`: H@K / N@K with sampled negatives
- :mod:`gnnlr.cli`: ``gnnlr`` command line
"""

__version__ = "0.1.0"
