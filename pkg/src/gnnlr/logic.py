"""Compile interaction histories into Horn clauses, plus a truth-table oracle.

A history ``h = (v1, v4)`` with target ``v3`` states that liking any
non-empty subset of ``h`` implies liking ``v3``. Written out, that is a
disjunction of ``2^n - 1`` implications; rewriting each implication as
``not p or q``, applying De Morgan to the conjunctions and dropping repeated
literals leaves the single clause ``not v1 or not v4 or v3``.
:func:`compile_training_expression` emits that clause directly in O(n);
:func:`expand_full_dnf` builds the long form so the two can be compared by
:func:`boolean_equivalent`.
"""

from __future__ import annotations

import gc
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

MAX_DNF_VARS = 16
MAX_TRUTH_TABLE_VARS = 20


class Literal(NamedTuple):
    item: int
    negated: bool


@dataclass(frozen=True)
class LogicExpression:
    """Disjunction of literals: negated history items, then one positive item."""

    literals: tuple

    def __post_init__(self):
        lits = self.literals
        if not lits:
            raise ValueError("empty expression")
        if len({lit.item for lit in lits}) != len(lits):
            raise ValueError("duplicate item in expression")
        if lits[-1].negated or any(not lit.negated for lit in lits[:-1]):
            raise ValueError("expression must end with its only positive literal")

    @property
    def history(self) -> list:
        return [lit.item for lit in self.literals[:-1]]

    @property
    def target(self) -> int:
        return self.literals[-1].item

    def __len__(self):
        return len(self.literals)

    def __str__(self):
        return " ∨ ".join(f"¬v{l.item}" if l.negated else f"v{l.item}" for l in self.literals)


def _dedup_recent(history, max_history):
    if max_history is not None:
        history = list(history)[-max_history:] if max_history > 0 else []
    return list(dict.fromkeys(history))


def compile_training_expression(history, target: int, max_history: int = None) -> LogicExpression:
    """``¬h1 ∨ ... ∨ ¬hk ∨ target`` over the distinct capped history.

    The cap keeps the ``max_history`` most recent entries (before dedup);
    literal order is first occurrence. The caller must drop examples whose
    target already appears in the capped history.
    """
    hist = _dedup_recent(history, max_history)
    if target in hist:
        raise ValueError(f"target {target} appears in the history")
    return LogicExpression(tuple(Literal(v, True) for v in hist) + (Literal(target, False),))


def compile_prediction_expression(history, candidate: int, max_history: int = None) -> LogicExpression:
    """Expression whose truth degree scores ``candidate`` for this history."""
    return compile_training_expression(history, candidate, max_history)


def horn_clause_count(n: int) -> int:
    """Number of implication clauses in the unsimplified form: ``2^n - 1``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > 62:
        raise OverflowError("n > 62")
    return (1 << n) - 1


# ----------------------------------------------------------- formula oracle


class Var(NamedTuple):
    name: int


class Not(NamedTuple):
    arg: object


class And(NamedTuple):
    args: tuple


class Or(NamedTuple):
    args: tuple


def expand_full_dnf(history, target: int) -> Or:
    """Disjunction over non-empty subsets ``S`` of ``¬(∧S) ∨ target``.

    Singleton subsets give ``¬v ∨ target`` directly. The result always has
    ``2^n - 1`` top-level clauses for ``n`` distinct history items.
    """
    hist = list(dict.fromkeys(history))
    if len(hist) > MAX_DNF_VARS:
        raise ValueError(f"at most {MAX_DNF_VARS} distinct history items")
    tv = Var(target)
    vars_ = [Var(v) for v in hist]
    # n=16 builds 65535 clauses: tuple.__new__ skips the NamedTuple argument
    # handling, and the acyclic tuples need no cyclic garbage collection
    new = tuple.__new__
    collecting = gc.isenabled()
    gc.disable()
    try:
        clauses = [new(Or, ((new(Not, (v,)), tv),)) for v in vars_]
        for r in range(2, len(hist) + 1):
            clauses += [new(Or, ((new(Not, (new(And, (s,)),)), tv),))
                        for s in combinations(vars_, r)]
    finally:
        if collecting:
            gc.enable()
    return Or(tuple(clauses))


def to_formula(expr) -> object:
    if isinstance(expr, LogicExpression):
        return Or(tuple(Not(Var(l.item)) if l.negated else Var(l.item) for l in expr.literals))
    return expr


def variables(formula) -> set:
    out = set()
    stack = [formula]
    while stack:
        f = stack.pop()
        if isinstance(f, Var):
            out.add(f.name)
        elif isinstance(f, Not):
            stack.append(f.arg)
        else:
            stack.extend(f.args)
    return out


def evaluate_formula(formula, env: dict):
    """Evaluate over ``env`` (name -> bool or bool array, vectorised)."""
    if isinstance(formula, Var):
        return env[formula.name]
    if isinstance(formula, Not):
        return np.logical_not(evaluate_formula(formula.arg, env))
    vals = [evaluate_formula(a, env) for a in formula.args]
    if isinstance(formula, And):
        return np.logical_and.reduce(vals) if vals else True
    return np.logical_or.reduce(vals) if vals else False


def truth_table(formula, names) -> np.ndarray:
    k = len(names)
    rows = np.arange(1 << k)
    env = {n: ((rows >> bit) & 1).astype(bool) for bit, n in enumerate(names)}
    return np.broadcast_to(evaluate_formula(formula, env), rows.shape)


def boolean_equivalent(a, b) -> bool:
    """Truth-table equality over the union of both variable sets."""
    fa, fb = to_formula(a), to_formula(b)
    names = sorted(variables(fa) | variables(fb))
    if len(names) > MAX_TRUTH_TABLE_VARS:
        raise ValueError(f"at most {MAX_TRUTH_TABLE_VARS} variables")
    return bool(np.array_equal(truth_table(fa, names), truth_table(fb, names)))
