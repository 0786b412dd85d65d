"""
From a history to a Horn clause
===============================

A user who liked ``v1`` and ``v4`` and then ``v3`` gives the rule
"any non-empty subset of {v1, v4} implies v3". Expanded, that is three
implications; simplified, it is one clause with one literal per item.
"""

import time

from gnnlr.logic import (boolean_equivalent, compile_prediction_expression,
                         compile_training_expression, expand_full_dnf, horn_clause_count)

long_form = expand_full_dnf([1, 4], 3)
short_form = compile_training_expression([1, 4], 3)
print("expanded clauses:", len(long_form.args))
print("simplified:      ", short_form)
print("equivalent:      ", boolean_equivalent(long_form, short_form))

###############################################################################
# Repeats disappear and only recent items count
# ---------------------------------------------
# Duplicates are dropped in first-occurrence order, and prediction uses at
# most ``max_history`` of the latest items.

print(compile_training_expression([1, 1, 2], 5))
print(compile_prediction_expression([10, 11, 12, 13, 14, 15, 16], 99, max_history=5))

###############################################################################
# Why the rewrite matters
# -----------------------
# The expanded form grows as 2^n - 1; the clause grows as n + 1.

for n in (2, 5, 10, 16):
    start = time.perf_counter()
    clauses = len(expand_full_dnf(list(range(1, n + 1)), 0).args)
    elapsed = time.perf_counter() - start
    print(f"n={n:2d}  expanded {clauses:6d} clauses ({elapsed * 1e3:6.1f} ms)"
          f"  simplified {n + 1} literals  formula {horn_clause_count(n)}")
