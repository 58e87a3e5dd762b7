"""Metrics and protocols for recommendation, link prediction and node classification."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoders import CENTRAL, CONTEXT


@dataclass
class MetricsReport:
    metrics: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def __getitem__(self, key):
        return self.metrics[key]

    def to_dict(self) -> dict:
        return {"config": self.config, "counts": self.counts, "metrics": self.metrics, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def rank_from_scores(true_score: float, cand_scores) -> int:
    """1 + #candidates scoring at least as high as the true item (ties count against it)."""
    return 1 + int(np.count_nonzero(np.asarray(cand_scores) >= true_score))


def rank_against(encoder, v: int, u_true: int, candidates) -> int:
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        return 1
    cv = encoder.vectors(np.array([v]), CENTRAL)[0]
    s_true = float(encoder.vectors(np.array([u_true]), CONTEXT)[0] @ cv)
    return rank_from_scores(s_true, encoder.vectors(candidates, CONTEXT) @ cv)


def ranking_metrics(ranks, ks=(10, 30)) -> dict:
    ranks = np.asarray(ranks, dtype=np.float64)
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for k in ks:
        out[f"hits@{k}"] = float(np.mean(ranks <= k))
    return out


def eval_recommendation(encoder, test_pairs, M="ALL", ks=(10, 30), graph=None, seed=None,
                        exclude_pairs=None, candidates=None, central=None, context=None) -> MetricsReport:
    """Rank each test item against ``M`` items never linked to its user.

    ``graph`` (training edges) and ``exclude_pairs`` (anything else the user
    has seen, e.g. all test and validation edges) define the excluded items;
    the test pairs themselves are always excluded.  ``M="ALL"`` uses every
    remaining item.  ``central``/``context`` may pass precomputed embedding
    matrices.
    """
    test_pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if len(test_pairs) == 0:
        raise ValueError("no test pairs")
    if candidates is None:
        candidates = graph.nodes_in("I") if graph is not None else np.arange(encoder.num_nodes)
    candidates = np.asarray(candidates, dtype=np.int64)
    C = encoder.full_matrix(CENTRAL, seed) if central is None else central
    X = encoder.full_matrix(CONTEXT, seed) if context is None else context
    n = C.shape[0]
    col = np.full(n, -1, dtype=np.int64)
    col[candidates] = np.arange(len(candidates))

    seen: dict[int, set] = {}
    extra = [test_pairs] + ([np.asarray(exclude_pairs, dtype=np.int64).reshape(-1, 2)] if exclude_pairs is not None else [])
    for block in extra:
        for a, b in block:
            seen.setdefault(int(a), set()).add(int(b))
    rng = np.random.default_rng(seed)
    ranks = np.empty(len(test_pairs), dtype=np.int64)
    shortfall = 0
    order = np.argsort(test_pairs[:, 0], kind="stable")
    users, starts = np.unique(test_pairs[order, 0], return_index=True)
    bounds = list(starts) + [len(order)]
    for ui, user in enumerate(users):
        idx = order[bounds[ui]:bounds[ui + 1]]
        valid = np.ones(len(candidates), dtype=bool)
        linked = set(seen.get(int(user), ()))
        if graph is not None:
            linked.update(graph.adj(user).tolist())
        lc = col[np.fromiter(linked, dtype=np.int64, count=len(linked))] if linked else np.zeros(0, np.int64)
        valid[lc[lc >= 0]] = False
        if col[user] >= 0:
            valid[col[user]] = False
        pool = candidates[valid]
        cand_scores_all = X[pool] @ C[user]
        for i in idx:
            s_true = float(X[test_pairs[i, 1]] @ C[user])
            if M == "ALL" or M is None:
                s = cand_scores_all
            else:
                if len(pool) < M:
                    shortfall += 1
                    s = cand_scores_all
                else:
                    s = cand_scores_all[rng.choice(len(pool), size=int(M), replace=False)]
            ranks[i] = rank_from_scores(s_true, s)
    report = MetricsReport(ranking_metrics(ranks, ks),
                           {"test_pairs": int(len(test_pairs)), "M": M, "shortfall": shortfall},
                           {"M": M, "ks": list(ks)}, seed)
    report.ranks = ranks
    return report


def auc_score(pos_scores, neg_scores) -> float:
    """Rank-sum AUC; ties contribute 1/2."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs positive and negative scores")
    allv = np.concatenate([pos, neg])
    order = np.argsort(allv, kind="mergesort")
    ranks = np.empty(len(allv))
    sorted_v = allv[order]
    # average ranks over tie groups
    bounds = np.flatnonzero(np.diff(sorted_v)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(allv)]])
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    r_pos = ranks[:len(pos)].sum()
    return float((r_pos - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg)))


def pair_scores(encoder, pairs, seed=None) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    C = encoder.full_matrix(CENTRAL, seed)
    X = encoder.full_matrix(CONTEXT, seed)
    return np.einsum("id,id->i", C[pairs[:, 0]], X[pairs[:, 1]])


def eval_link_prediction(encoder, split, seed=None) -> MetricsReport:
    if len(split.test_pos) == 0 or len(split.test_neg) == 0:
        raise ValueError("empty test set")
    auc = auc_score(pair_scores(encoder, split.test_pos, seed), pair_scores(encoder, split.test_neg, seed))
    return MetricsReport({"auc": auc},
                         {"test_pos": int(len(split.test_pos)), "test_neg": int(len(split.test_neg))}, {}, seed)


def _fit_ovr_logistic(X, Y, epochs=500, lr=0.1, l2=1e-4):
    """Full-batch gradient descent on independent per-label logistic losses."""
    n, d = X.shape
    W = np.zeros((d, Y.shape[1]))
    b = np.zeros(Y.shape[1])
    for _ in range(epochs):
        P = 1.0 / (1.0 + np.exp(-np.clip(X @ W + b, -500, 500)))
        G = (P - Y) / n
        W -= lr * (X.T @ G + l2 * W)
        b -= lr * G.sum(axis=0)
    return W, b


def f1_scores(Y_true, Y_pred) -> tuple[float, float]:
    """(micro, macro) F1 for binary indicator matrices. Labels absent from both count as skipped in macro."""
    Y_true = Y_true.astype(bool)
    Y_pred = Y_pred.astype(bool)
    tp = (Y_true & Y_pred).sum(axis=0).astype(np.float64)
    fp = (~Y_true & Y_pred).sum(axis=0).astype(np.float64)
    fn = (Y_true & ~Y_pred).sum(axis=0).astype(np.float64)
    denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / denom if denom else 0.0
    present = (tp + fp + fn) > 0
    per = np.where(present, 2 * tp / np.maximum(2 * tp + fp + fn, 1), 0.0)
    macro = float(per[present].mean()) if present.any() else 0.0
    return float(micro), macro


def eval_classification(embeddings, labels: dict, train_ratio: float, seed=None,
                        epochs=500, lr=0.1, l2=1e-4) -> MetricsReport:
    """One-vs-rest logistic regression; each test node gets its top-L_i labels."""
    if not 0 < train_ratio < 1:
        raise ValueError("train_ratio must lie in (0, 1)")
    nodes = np.array(sorted(labels), dtype=np.int64)
    if any(len(labels[v]) == 0 for v in nodes):
        raise ValueError("every labeled node needs at least one label")
    classes = sorted({lab for v in nodes for lab in labels[v]})
    cidx = {c: i for i, c in enumerate(classes)}
    Y = np.zeros((len(nodes), len(classes)))
    for r, v in enumerate(nodes):
        for lab in labels[v]:
            Y[r, cidx[lab]] = 1.0
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(nodes))
    n_train = min(max(1, int(round(train_ratio * len(nodes)))), len(nodes) - 1)
    tr, te = perm[:n_train], perm[n_train:]
    X = np.asarray(embeddings, dtype=np.float64)[nodes]
    W, b = _fit_ovr_logistic(X[tr], Y[tr], epochs, lr, l2)
    scores = X[te] @ W + b
    # a label never seen in training is never predicted
    scores[:, Y[tr].sum(axis=0) == 0] = -np.inf
    pred = np.zeros_like(Y[te])
    for r in range(len(te)):
        L = int(Y[te][r].sum())
        top = np.argsort(-scores[r], kind="stable")[:L]
        pred[r, top[np.isfinite(scores[r, top])]] = 1.0
    micro, macro = f1_scores(Y[te], pred)
    return MetricsReport({"micro_f1": micro, "macro_f1": macro},
                         {"train_nodes": int(len(tr)), "test_nodes": int(len(te)), "labels": len(classes)},
                         {"train_ratio": train_ratio, "epochs": epochs, "lr": lr, "l2": l2}, seed)
