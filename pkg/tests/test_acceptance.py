"""Acceptance criteria 1-8, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the session summary.
The MovieLens and Arxiv criteria train full models and are marked ``slow``
(about forty minutes on one core); select them with ``-m slow`` or skip them
with ``-m "not slow"``.  Data is looked up under ``NEGSAMPLING_DATA``,
falling back to ``data/`` at the repository root.
"""
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from negsampling.datasets import load_arxiv, load_movielens
from negsampling.encoders import LookupEncoder
from negsampling.experiments import (
    SWEEP,
    interior_maximum,
    run_link_prediction,
    run_rec_cv,
    strictly_decreasing,
    sweep,
)
from negsampling.graph import barabasi_albert
from negsampling.sampling import McnsChain, ProposalDistribution, mcns_step
from negsampling.theory import (
    CategoricalPair,
    empirical_risk,
    maximize_objective,
    optimal_logits,
    random_pair,
    risk_prediction,
)

ROOT = Path(__file__).resolve().parents[1]
DATA = Path(os.environ.get("NEGSAMPLING_DATA", ROOT / "data"))

logging.getLogger("negsampling").setLevel(logging.INFO)


@pytest.fixture(scope="module")
def movielens():
    return load_movielens(DATA / "ml-100k" / "u.data")


def test_criterion_1_optimal_logits_oracle(criterion):
    record = criterion(1)
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        pair = random_pair(rng, int(rng.integers(2, 21)), (1, 5)[i % 2])
        worst = max(worst, float(np.max(np.abs(maximize_objective(pair) - optimal_logits(pair)))))
    elapsed = time.perf_counter() - start
    ok = record(worst < 1e-4 and elapsed < 60,
                f"max |numeric - closed form| = {worst:.2e} (< 1e-4) over 100 pairs in {elapsed:.1f}s")
    assert ok


def test_criterion_2_risk_formula(criterion):
    record = criterion(2)
    start = time.perf_counter()
    pair = CategoricalPair(np.full(10, 0.1), np.full(10, 0.1), 1)
    predicted = risk_prediction(pair, 1000)
    emp, used = empirical_risk(pair, 1000, 500, seed=12)
    ratio = emp / predicted
    elapsed = time.perf_counter() - start
    ok = record(np.all(np.abs(ratio - 1) <= 0.2) and np.all(used == 500) and elapsed < 300,
                f"predicted {predicted[0]:.4f}, empirical/predicted in [{ratio.min():.3f}, {ratio.max():.3f}] "
                f"(tolerance 0.2) in {elapsed:.1f}s")
    assert ok


def test_criterion_3_mh_stationarity(criterion):
    record = criterion(3)
    start = time.perf_counter()
    n, v = 30, 0
    g = barabasi_albert(n, 2, seed=7)
    rng = np.random.default_rng(7)
    enc = LookupEncoder(rng.normal(size=(n, 8)), rng.normal(size=(n, 8)))
    s = enc.context_table @ enc.central_table[v]
    target = np.maximum(s, 1e-4) ** 0.75
    target[v] = 0
    target /= target.sum()
    q = ProposalDistribution(g, k_local=10, seed=1)
    chain = McnsChain(1)
    chain.excluded = {v}
    cv = enc.central_table[v]
    counts = np.zeros(n)
    for _ in range(10**6):
        counts[mcns_step(chain, enc, v, q, rng, cv)] += 1
    tv = 0.5 * np.abs(counts / counts.sum() - target).sum()
    elapsed = time.perf_counter() - start
    ok = record(tv < 0.02 and elapsed < 60,
                f"TV = {tv:.4f} (< 0.02) on {n} nodes after 1e6 steps in {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_4_movielens_ten_fold(criterion, movielens):
    record = criterion(4)
    res = run_rec_cv(movielens, samplers=("mcns", "uniform", "degree_power"))
    mean = {k: r["mean_mrr"] for k, r in res.items()}
    in_band = 0.043 <= mean["mcns"] <= 0.063
    beats = mean["mcns"] > mean["uniform"] and mean["mcns"] > mean["degree_power"]
    folds = " ".join(f"{r['mrr']:.4f}" for r in res["mcns"]["runs"])
    ok = record(in_band and beats,
                f"mean MRR mcns {mean['mcns']:.4f} (band [0.043, 0.063]), uniform {mean['uniform']:.4f}, "
                f"deg^0.75 {mean['degree_power']:.4f}; mcns folds {folds}")
    assert ok


@pytest.mark.slow
def test_criterion_5_arxiv_link_prediction(criterion):
    record = criterion(5)
    try:
        graph = load_arxiv(DATA / "ca-GrQc.txt")
    except FileNotFoundError as exc:
        record(False, f"dataset unavailable: {exc}")
        raise
    auc = run_link_prediction(graph)
    margin_ok = all(auc["mcns"] >= a - 0.5 for k, a in auc.items() if k != "mcns")
    ok = record(71.0 <= auc["mcns"] <= 75.0 and margin_ok,
                "AUC " + ", ".join(f"{k} {a:.2f}" for k, a in auc.items()) + " (mcns band [71, 75])")
    assert ok


@pytest.mark.slow
def test_criterion_6_inverse_dns_trend(criterion, movielens):
    record = criterion(6)
    means = sweep(movielens, "inverse_dns", "dns_candidates", [1, 5, 20], seeds=(0, 1, 2), protocol=SWEEP)
    ok = record(strictly_decreasing(means.values()),
                "inverse DNS mean MRR " + ", ".join(f"M={m}: {x:.4f}" for m, x in means.items())
                + " (strictly decreasing required)")
    assert ok


@pytest.mark.slow
def test_criterion_7_negative_count_trend(criterion, movielens):
    record = criterion(7)
    means = sweep(movielens, "degree_power", "negatives", [1, 4, 16, 64], seeds=(0, 1, 2), protocol=SWEEP)
    ok = record(interior_maximum(means.values()),
                "deg^0.75 mean MRR " + ", ".join(f"k={k}: {x:.4f}" for k, x in means.items())
                + " (interior maximum required)")
    assert ok


PROPERTY_SUITES = [
    "tests/test_encoders.py::test_lookup_gradients_match_finite_differences",
    "tests/test_encoders.py::test_sage_gradients_match_finite_differences",
    "tests/test_encoders.py::test_nce_gradients_property",
    "tests/test_graph.py::test_dfs_hand_traces",
    "tests/test_graph.py::test_dfs_tree_length_and_adjacency",
    "tests/test_graph.py::test_dfs_consecutive_adjacent_within_components",
    "tests/test_graph.py::test_split_connectivity_over_seeds",
    "tests/test_sampling.py::test_samplers_confined_to_items",
    "tests/test_sampling.py::test_beta_zero_matches_uniform",
    "tests/test_evaluation.py::test_rank_invariant_under_monotone_transforms",
    "tests/test_evaluation.py::test_auc_matches_mann_whitney",
]


def test_criterion_8_property_suites(criterion):
    record = criterion(8)
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_SUITES],
                          cwd=ROOT, capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    ok = record(proc.returncode == 0 and elapsed < 120, f"{tail} (wall {elapsed:.1f}s, limit 120s)")
    assert ok, proc.stdout[-3000:]
