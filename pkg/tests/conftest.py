import os

import numpy as np
import pytest

from gnnlr.data import Interaction, build_histories, leave_one_out_split
from gnnlr.graph import graph_from_split

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ML100K = os.environ.get("GNNLR_ML100K", os.path.join(ROOT, "data", "ml-100k.tsv"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_rows(seed=0):
    """8 users each rating all 6 items in random order, one of them below
    threshold, so every user keeps exactly one training negative."""
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(8):
        order = rng.permutation(6)
        low = int(rng.integers(6))
        for t, v in enumerate(order):
            rows.append(Interaction(f"u{u}", f"i{v}", 2.0 if t == low else 5.0, 100 * u + t))
    return rows


@pytest.fixture(scope="session")
def toy():
    """(rows, split, graph) for the 8-user, 6-item toy set."""
    rows = toy_rows()
    histories, ids = build_histories(rows)
    split = leave_one_out_split(histories, len(ids.items), ids=ids)
    return rows, split, graph_from_split(split)


@pytest.fixture
def write_lines(tmp_path):
    def write(lines, name="ratings.tsv"):
        path = tmp_path / name
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return str(path)
    return write


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
