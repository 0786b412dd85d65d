"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

The MovieLens-100k runs (criteria 6-8) need ``data/ml-100k.tsv`` (see
``scripts/fetch_ml100k.py``). Trained runs are cached under
``.acceptance_cache/``, keyed by the training configuration, the dataset
bytes and a fingerprint of the training-path source code (docstrings and
comments excluded), so any change to the model invalidates the cache. A
cached run is only reused after its checkpoint re-evaluates to the stored
metrics bit for bit. Set ``GNNLR_FRESH=1`` to ignore the cache.
"""

import ast
import contextlib
import hashlib
import inspect
import json
import os
import shutil
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, ML100K, ROOT
from gnnlr import autodiff, data, evaluate, graph, logic, model, train
from gnnlr.cli import main as cli_main
from gnnlr.data import Interaction, build_histories, leave_one_out_split
from gnnlr.evaluate import evaluate as run_eval
from gnnlr.evaluate import metrics_at_k
from gnnlr.graph import build_item_graph, graph_from_split, normalize
from gnnlr.logic import (boolean_equivalent, compile_training_expression, expand_full_dnf,
                         horn_clause_count)
from gnnlr.model import init_params, load_checkpoint, propagate, save_checkpoint
from gnnlr.toy import gradcheck_problem, synthetic_interactions
from gnnlr.train import TrainConfig, fit, format_log

CACHE = os.path.join(ROOT, ".acceptance_cache")
SEEDS = (0, 1, 2)


@contextlib.contextmanager
def criterion(number, title):
    """Record one PASS/FAIL line for the criterion run inside the block."""
    notes = []
    try:
        yield notes
    except BaseException as exc:
        if isinstance(exc, pytest.skip.Exception):
            ACCEPTANCE_LINES.append(f"criterion {number}: SKIP {title} ({exc})")
        else:
            first = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            ACCEPTANCE_LINES.append(f"criterion {number}: FAIL {title}; {first}")
        raise
    detail = "; ".join(notes)
    ACCEPTANCE_LINES.append(f"criterion {number}: PASS {title}" + (f"; {detail}" if detail else ""))


# ------------------------------------------------------------------ oracles


def brute_force_edges(sequences):
    counts = {}
    for seq in sequences:
        for a, b in zip(seq, seq[1:]):
            if a != b:
                key = (min(a, b), max(a, b))
                counts[key] = counts.get(key, 0) + 1
    return counts


def dense_gcn(n, edges, E, thetas):
    A_hat = np.eye(n)
    for i, j, w in edges:
        A_hat[i, j] += w
        A_hat[j, i] += w
    d = A_hat.sum(axis=1)
    M = A_hat / np.sqrt(np.outer(d, d))
    X = E
    for th in thetas:
        X = np.maximum(M @ X @ th, 0.0)
    return X


# -------------------------------------------------------------- criteria 1-5


def test_criterion_1_logic_equivalence():
    with criterion(1, "simplified clause equals full DNF on 500 random histories") as notes:
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        agree = 0
        for _ in range(500):
            n = int(rng.integers(1, 6))
            distinct = rng.choice(100, size=n + 1, replace=False)
            items, target = list(distinct[:n]), int(distinct[n])
            # sprinkle repeats so deduplication is exercised too
            history = items + list(rng.choice(items, size=int(rng.integers(0, 4))))
            rng.shuffle(history)
            simplified = compile_training_expression(history, target)
            agree += boolean_equivalent(expand_full_dnf(history, target), simplified)
        elapsed = time.perf_counter() - start
        notes.append(f"{agree}/500 equivalent in {elapsed:.2f}s")
        assert agree == 500, f"only {agree}/500 equivalent"
        assert elapsed < 10, f"took {elapsed:.2f}s"


def test_criterion_2_horn_count():
    with criterion(2, "horn_clause_count and DNF size are 2^n - 1 for n in 0..16") as notes:
        start = time.perf_counter()
        for n in range(17):
            assert horn_clause_count(n) == 2 ** n - 1
            clauses = len(expand_full_dnf(list(range(1, n + 1)), 0).args)
            assert clauses == 2 ** n - 1, f"n={n}: {clauses} clauses"
        elapsed = time.perf_counter() - start
        notes.append(f"{elapsed:.2f}s")
        assert elapsed < 1, f"took {elapsed:.2f}s"


def test_criterion_3_gnn_oracle():
    with criterion(3, "sparse GCN equals dense propagation on 30 graphs") as notes:
        rng = np.random.default_rng(7)
        start = time.perf_counter()
        worst = 0.0
        for trial in range(30):
            n = int(rng.integers(1, 51))
            seqs = [list(rng.integers(0, n, size=int(rng.integers(0, 12))))
                    for _ in range(int(rng.integers(0, 10)))]
            g = build_item_graph(seqs, n)
            params = init_params(n, 8, 2, "gcn", rng, dtype=np.float64, emb_std=1.0)
            got = propagate(params, normalize(g))
            want = dense_gcn(n, g.edges, params.E, params.thetas)
            worst = max(worst, float(np.max(np.abs(got - want))))
            flat = init_params(n, 8, 0, "gcn", rng, dtype=np.float64)
            assert np.array_equal(propagate(flat, normalize(g)), flat.E), "L=0 changed E"
        elapsed = time.perf_counter() - start
        notes.append(f"max abs diff {worst:.1e}, {elapsed:.2f}s")
        assert worst <= 1e-10
        assert elapsed < 5, f"took {elapsed:.2f}s"


def test_criterion_4_gradient_check():
    with criterion(4, "finite-difference check of score plus total loss (6 items, d=8)") as notes:
        start = time.perf_counter()
        for variant, layers in (("gcn", 2), ("lightgcn", 2), ("none", 0)):
            params, f = gradcheck_problem(n_items=6, d=8, seed=0, variant=variant,
                                          layers=layers)
            report = autodiff.grad_check(f, params.trainable(), h=1e-4, tol=1e-4)
            notes.append(f"{variant} max rel err {report.max_error:.1e}")
            assert report.passed, f"{variant}: worst {report.worst} {report.max_error:.2e}"
        elapsed = time.perf_counter() - start
        notes.append(f"{elapsed:.1f}s")
        assert elapsed < 30, f"took {elapsed:.1f}s"


def test_criterion_5_graph_oracle():
    with criterion(5, "edge weights match brute-force pair counts on 50 history sets") as notes:
        rng = np.random.default_rng(11)
        start = time.perf_counter()
        for _ in range(50):
            n = int(rng.integers(2, 40))
            seqs = [list(rng.integers(0, n, size=int(rng.integers(0, 20))))
                    for _ in range(int(rng.integers(1, 15)))]
            g = build_item_graph(seqs, n)
            assert {(i, j): w for i, j, w in g.edges} == brute_force_edges(seqs)
            assert (g.degree_hat - 1).sum() == 2 * sum(w for _, _, w in g.edges)
        elapsed = time.perf_counter() - start
        notes.append(f"{elapsed:.2f}s")
        assert elapsed < 5, f"took {elapsed:.2f}s"


# ------------------------------------------------------------------ helpers


def load_ml100k():
    if not os.path.isfile(ML100K):
        pytest.skip(f"{ML100K} missing; run scripts/fetch_ml100k.py")
    rows = data.parse_interactions(ML100K)
    histories, ids = build_histories(rows)
    split = leave_one_out_split(histories, len(ids.items), ids=ids)
    return split, graph_from_split(split)


def uniform_split(seed, n_users=500, n_items=300, per_user=8):
    """Users rate items drawn uniformly at random: items are exchangeable."""
    rows = synthetic_interactions(n_users, n_items, per_user, seed=seed, p_positive=1.0,
                                  structured=False)
    histories, ids = build_histories(rows)
    split = leave_one_out_split(histories, len(ids.items), ids=ids)
    return split, graph_from_split(split)


def code_fingerprint():
    """Hash of the training-path modules with docstrings dropped."""
    h = hashlib.sha256()
    for mod in (autodiff, data, graph, logic, model, train, evaluate):
        tree = ast.parse(inspect.getsource(mod))
        for node in ast.walk(tree):
            body = getattr(node, "body", None)
            if (isinstance(body, list) and body and isinstance(body[0], ast.Expr)
                    and isinstance(getattr(body[0], "value", None), ast.Constant)
                    and isinstance(body[0].value.value, str)):
                node.body = body[1:] or [ast.Pass()]
        h.update(ast.dump(tree).encode())
    return h.hexdigest()


def file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


_RUNS = {}


def ml100k_run(layers, seed):
    """Train (or load from cache) one ML-100k run; returns the result dict."""
    if (layers, seed) in _RUNS:
        return _RUNS[layers, seed]
    split, g = load_ml100k()
    config = TrainConfig(gnn_layers=layers, variant="gcn", seed=seed)
    key_src = json.dumps({"config": config.as_dict(), "code": code_fingerprint(),
                          "data": file_digest(ML100K), "numpy": np.__version__},
                         sort_keys=True)
    key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
    run_dir = os.path.join(CACHE, f"gcn-L{layers}-seed{seed}-{key}")
    result_path = os.path.join(run_dir, "result.json")
    adj = normalize(g)
    if os.path.isfile(result_path) and not os.environ.get("GNNLR_FRESH"):
        with open(result_path) as fh:
            result = json.load(fh)
        params = load_checkpoint(os.path.join(run_dir, "checkpoint.bin"))
        again = run_eval(params, adj, split, "test", 100, ks=(10, 20), seed=seed,
                         max_history=config.max_history)
        assert again.to_kv() == result["test_kv"], f"cached run {run_dir} does not re-evaluate"
        result["cached"] = True
    else:
        if os.path.isdir(run_dir):
            shutil.rmtree(run_dir)
        start = time.perf_counter()
        trained = fit(config, split, g)
        seconds = time.perf_counter() - start
        test = run_eval(trained.params, adj, split, "test", 100, ks=(10, 20), seed=seed,
                        max_history=config.max_history)
        os.makedirs(run_dir)
        save_checkpoint(os.path.join(run_dir, "checkpoint.bin"), trained.params)
        with open(os.path.join(run_dir, "train_log.tsv"), "w") as fh:
            fh.write(format_log(trained.log))
        result = {"layers": layers, "seed": seed, "config": config.as_dict(),
                  "best_epoch": trained.best_epoch, "epochs": len(trained.log),
                  "valid_ndcg10": trained.best_ndcg, "seconds": seconds,
                  "hit10": test.metrics[10][0], "ndcg10": test.metrics[10][1],
                  "hit20": test.metrics[20][0], "ndcg20": test.metrics[20][1],
                  "test_kv": test.to_kv()}
        with open(result_path, "w") as fh:
            json.dump(result, fh, indent=1)
        result["cached"] = False
    _RUNS[layers, seed] = result
    return result


# -------------------------------------------------------------- criteria 6-8


def test_criterion_6_metric_truths():
    with criterion(6, "metric truths and untrained H@10 near 10/101") as notes:
        assert metrics_at_k(1, 10) == (1, 1.0) and metrics_at_k(1, 20)[1] == 1.0
        assert metrics_at_k(3, 10)[1] == 0.5
        assert metrics_at_k(11, 10)[0] == 0
        expected = 10 / 101
        # default model on exchangeable synthetic items
        hits = []
        for seed in range(5):
            split, g = uniform_split(seed)
            params = init_params(split.n_items, 64, 2, "gcn", np.random.default_rng([seed, 0]))
            r = run_eval(params, normalize(g), split, "test", 100, ks=(10,), seed=seed)
            hits.append(r.metrics[10][0])
        notes.append(f"synthetic gcn mean {np.mean(hits):.4f}")
        assert abs(np.mean(hits) - expected) <= 0.03, f"synthetic gcn mean {np.mean(hits):.4f}"
        # graph-free model on ML-100k: candidate vectors are iid at init
        split, g = load_ml100k()
        by_variant = {}
        for variant, layers in (("none", 0), ("gcn", 2)):
            hits = []
            for seed in range(5):
                params = init_params(split.n_items, 64, layers, variant,
                                     np.random.default_rng([seed, 0]))
                r = run_eval(params, normalize(g), split, "test", 100, ks=(10,), seed=seed)
                hits.append(r.metrics[10][0])
            by_variant[variant] = float(np.mean(hits))
        notes.append(f"ML-100k L=0 mean {by_variant['none']:.4f}")
        notes.append(f"ML-100k gcn mean {by_variant['gcn']:.4f} (degree-biased, not gated)")
        assert abs(by_variant["none"] - expected) <= 0.03, \
            f"ML-100k L=0 mean {by_variant['none']:.4f}"


@pytest.mark.slow
def test_criterion_7_ml100k_reproduction():
    with criterion(7, "ML-100k H@10 >= 0.60 and N@10 >= 0.35 over 3 seeds") as notes:
        runs = [ml100k_run(2, s) for s in SEEDS]
        hit = float(np.mean([r["hit10"] for r in runs]))
        ndcg = float(np.mean([r["ndcg10"] for r in runs]))
        hours = max(r["seconds"] for r in runs) / 3600
        notes.append(f"H@10 {hit:.4f} N@10 {ndcg:.4f} (reference 0.6956 / 0.4239)")
        notes.append(f"H@20 {np.mean([r['hit20'] for r in runs]):.4f} "
                     f"N@20 {np.mean([r['ndcg20'] for r in runs]):.4f}")
        notes.append(f"longest run {hours:.2f}h, best epochs {[r['best_epoch'] for r in runs]}")
        if all(r["cached"] for r in runs):
            notes.append("checkpoints re-evaluated from cache")
        assert hit >= 0.60, f"H@10 {hit:.4f} < 0.60"
        assert ndcg >= 0.35, f"N@10 {ndcg:.4f} < 0.35"
        assert hours <= 2, f"a run took {hours:.2f}h"


@pytest.mark.slow
def test_criterion_8_ablation_direction():
    with criterion(8, "gcn (L=2) mean N@10 >= L=0 ablation mean N@10") as notes:
        gcn = [ml100k_run(2, s)["ndcg10"] for s in SEEDS]
        flat = [ml100k_run(0, s)["ndcg10"] for s in SEEDS]
        margin = float(np.mean(gcn) - np.mean(flat))
        notes.append(f"gcn {np.mean(gcn):.4f} vs L=0 {np.mean(flat):.4f}, margin {margin:+.4f}")
        notes.append(f"per seed gcn {np.round(gcn, 4).tolist()} L=0 {np.round(flat, 4).tolist()}")
        assert margin >= 0, f"negative margin {margin:+.4f}"


# ------------------------------------------------------------- criteria 9-10


def write_ratings(path, seed):
    rows = synthetic_interactions(60, 40, 14, seed=seed)
    with open(path, "w") as fh:
        for r in rows:
            fh.write(f"{r.user}\t{r.item}\t{r.rating:g}\t{r.timestamp}\n")


def end_to_end(workdir, ratings):
    data_dir = os.path.join(workdir, "data")
    run_dir = os.path.join(workdir, "run")
    assert cli_main(["prepare", "--input", ratings, "--out", data_dir]) == 0
    assert cli_main(["train", "--data", data_dir, "--out", run_dir, "--d", "16",
                     "--max-epochs", "4", "--eval-negatives", "20", "--seed", "5"]) == 0
    assert cli_main(["evaluate", "--checkpoint", os.path.join(run_dir, "checkpoint.bin"),
                     "--data", data_dir, "--negatives", "20", "--seed", "5"]) == 0
    files = {}
    for sub in (data_dir, run_dir):
        for name in sorted(os.listdir(sub)):
            if name != "timing.tsv":  # wall-clock seconds only
                with open(os.path.join(sub, name), "rb") as fh:
                    files[os.path.join(os.path.basename(sub), name)] = fh.read()
    return files


def test_criterion_9_determinism(tmp_path, capsys):
    with criterion(9, "two prepare/train/evaluate runs are byte-identical") as notes:
        ratings = str(tmp_path / "ratings.tsv")
        write_ratings(ratings, seed=3)
        a = end_to_end(str(tmp_path / "a"), ratings)
        b = end_to_end(str(tmp_path / "b"), ratings)
        assert sorted(a) == sorted(b)
        differing = [name for name in a if a[name] != b[name]]
        notes.append(f"{len(a)} files compared")
        assert not differing, f"differing files: {differing}"
        assert "run/metrics_test.txt" in a and "run/checkpoint.bin" in a


def test_criterion_10_checkpoint_round_trip(tmp_path):
    with criterion(10, "save/load/evaluate reproduces metrics bit-exactly") as notes:
        split, g = uniform_split(0, n_users=120, n_items=60, per_user=10)
        config = TrainConfig(d=16, max_epochs=3, eval_negatives=20, seed=1)
        params = fit(config, split, g).params
        adj = normalize(g)
        before = run_eval(params, adj, split, "test", 20, ks=(5, 10, 20), seed=1)
        path = str(tmp_path / "ck.bin")
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        after = run_eval(loaded, adj, split, "test", 20, ks=(5, 10, 20), seed=1)
        assert after.to_kv() == before.to_kv()
        assert np.array_equal(after.ranks, before.ranks)
        save_checkpoint(str(tmp_path / "again.bin"), loaded)
        with open(path, "rb") as x, open(tmp_path / "again.bin", "rb") as y:
            assert x.read() == y.read()
        notes.append(f"H@10 {after.metrics[10][0]!r} N@10 {after.metrics[10][1]!r}")
