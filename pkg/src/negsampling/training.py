"""Losses and the two training loops.

``train_sampled_nce`` draws degree-proportional batches of positive pairs and
contrasts each with ``k`` negatives.  ``train_mcns`` walks the central nodes
in DFS order so a Markov-chain sampler can carry its state from one node to
the next, and trains with the margin (hinge) loss.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import queue
import threading
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoders import CENTRAL, CONTEXT
from .optim import Adam, AdamState, adam_step, merge_grads  # noqa: F401  (re-exported)
from .sampling import McnsSampler, PositiveSampler, chain_schedule

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    dim: int = 256
    margin: float = 0.1
    batch_size: int = 256
    negatives: int = 1
    epochs: int = 10
    loss: str = "hinge"
    seed: int = 0
    # train_mcns only: central visits per optimizer step; 1 = one step per (v, k negatives) group
    visits_per_update: int = 1
    literal_updates: bool = False
    patience: int = 5
    # train_sampled_nce only: producer threads drawing batches; 1 is deterministic
    workers: int = 1

    def __post_init__(self):
        if self.negatives < 1:
            raise ValueError("negatives (k) must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        if self.loss not in ("nce", "hinge"):
            raise ValueError("loss must be 'nce' or 'hinge'")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class TrainResult:
    encoder: object
    loss_trace: list = field(default_factory=list)
    accept_trace: list = field(default_factory=list)
    valid_trace: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "accept_rate"])
            for i, loss in enumerate(self.loss_trace):
                acc = self.accept_trace[i] if i < len(self.accept_trace) else ""
                w.writerow([i + 1, f"{loss:.8g}", "" if acc == "" or acc is None else f"{acc:.6f}"])


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def nce_loss(s_pos, s_negs):
    """``-log sigmoid(s_pos) - sum log(1 - sigmoid(s_neg))`` and its score gradients.

    Vectorized over a leading batch axis when ``s_pos`` is an array and
    ``s_negs`` has one more trailing axis.
    """
    s_pos = np.asarray(s_pos, dtype=np.float64)
    s_negs = np.asarray(s_negs, dtype=np.float64)
    loss = _softplus(-s_pos) + _softplus(s_negs).sum(axis=-1)
    g_pos = _sigmoid(s_pos) - 1.0
    g_neg = _sigmoid(s_negs)
    if loss.ndim == 0:
        return float(loss), float(g_pos), g_neg
    return loss, g_pos, g_neg


def hinge_loss(s_pos, s_neg, margin: float):
    """``max(0, s_neg - s_pos + margin)``; the kink counts as inactive."""
    s_pos = np.asarray(s_pos, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    z = s_neg - s_pos + margin
    active = z > 0
    loss = np.where(active, z, 0.0)
    g = active.astype(np.float64)
    if loss.ndim == 0:
        return float(loss), (-float(g), float(g))
    return loss, (-g, g)


def _pair_losses(cv, pu, nn, mask, config):
    """Loss and gradients for B centrals, each with one positive and up to k negatives.

    ``cv``, ``pu``: (B, d); ``nn``: (B, k, d); ``mask``: (B, k) valid negatives.
    """
    s_pos = np.einsum("bd,bd->b", cv, pu)
    s_neg = np.einsum("bd,bkd->bk", cv, nn)
    if config.loss == "nce":
        loss_neg = _softplus(s_neg) * mask
        loss = _softplus(-s_pos) + loss_neg.sum(axis=1)
        g_pos = _sigmoid(s_pos) - 1.0
        g_neg = _sigmoid(s_neg) * mask
    else:
        z = s_neg - s_pos[:, None] + config.margin
        act = (z > 0) & mask
        loss = np.where(act, z, 0.0).sum(axis=1)
        g_neg = act.astype(np.float64)
        g_pos = -g_neg.sum(axis=1)
    d_cv = g_pos[:, None] * pu + np.einsum("bk,bkd->bd", g_neg, nn)
    d_pu = g_pos[:, None] * cv
    d_nn = g_neg[:, :, None] * cv[:, None, :]
    return loss, d_cv, d_pu, d_nn


def _gradient_step(encoder, opt, centrals, positives, negs, mask, config, rng):
    """Forward, loss, backward and one optimizer step over a group of pairs. Returns per-pair losses."""
    B, k = negs.shape
    cv, c_cache = encoder.forward(centrals, CENTRAL, rng)
    pu, p_cache = encoder.forward(positives, CONTEXT, rng)
    nn_flat, n_cache = encoder.forward(negs.ravel(), CONTEXT, rng)
    nn = nn_flat.reshape(B, k, -1)
    loss, d_cv, d_pu, d_nn = _pair_losses(cv, pu, nn, mask, config)
    parts = encoder.backward(c_cache, d_cv) + encoder.backward(p_cache, d_pu) + \
        encoder.backward(n_cache, d_nn.reshape(B * k, -1))
    opt.step(merge_grads(parts))
    return loss


def _pack(neg_lists, k):
    B = len(neg_lists)
    negs = np.zeros((B, k), dtype=np.int64)
    mask = np.zeros((B, k), dtype=bool)
    for i, ns in enumerate(neg_lists):
        negs[i, :len(ns)] = ns
        mask[i, :len(ns)] = True
    return negs, mask


def train_sampled_nce(graph, encoder, positive: PositiveSampler, negative, config: TrainConfig,
                      iterations_per_epoch: int | None = None) -> TrainResult:
    """Mini-batch contrastive training with degree-proportional centrals.

    Each iteration draws ``batch_size`` positive pairs, ``k`` negatives per
    pair, and takes one Adam step on the summed loss.  An epoch is one pass
    worth of positive arcs unless ``iterations_per_epoch`` is given.
    """
    rng = np.random.default_rng(config.seed)
    opt = Adam(encoder.params, config.learning_rate)
    iters = iterations_per_epoch or max(1, -(-positive.num_pairs // config.batch_size))
    result = TrainResult(encoder)
    stats = {"iterations": 0, "negatives_drawn": 0, "skipped_pairs": 0, "negatives_per_iteration": []}

    def draw(pos, neg, r):
        vs, us = pos.sample_batch(config.batch_size, r)
        return vs, us, [neg.sample(int(v), int(u), config.negatives, encoder, r) for v, u in zip(vs, us)]

    for epoch in range(config.epochs):
        total, count = 0.0, 0
        if config.workers > 1:
            batches = _produce(draw, positive, negative, iters, config.workers, rng, opt)
        else:
            batches = (draw(positive, negative, rng) for _ in range(iters))
        for vs, us, neg_lists in batches:
            keep = [i for i, ns in enumerate(neg_lists) if len(ns) > 0]
            stats["skipped_pairs"] += len(vs) - len(keep)
            drawn = sum(len(ns) for ns in neg_lists)
            stats["negatives_drawn"] += drawn
            stats["negatives_per_iteration"].append(drawn)
            stats["iterations"] += 1
            if not keep:
                continue
            negs, mask = _pack([neg_lists[i] for i in keep], config.negatives)
            loss = _gradient_step(encoder, opt, vs[keep], us[keep], negs, mask, config, rng)
            total += float(loss.sum())
            count += len(keep)
        result.loss_trace.append(total / max(count, 1))
        logger.debug("epoch %d loss %.5f", epoch + 1, result.loss_trace[-1])
    result.stats = stats
    return result


def _produce(draw, positive, negative, iters, workers, rng, opt):
    """Yield batches drawn by ``workers`` threads, each with its own sampler state and stream.

    Samplers read the encoder only while holding ``opt.lock``, which the
    consumer also holds while it updates, so reads never see a half-written
    step.  Batch order depends on thread timing.
    """
    shared = {id(positive.graph): positive.graph, id(negative.graph): negative.graph}
    q: queue.Queue = queue.Queue(maxsize=2 * workers)
    counts = [iters // workers + (i < iters % workers) for i in range(workers)]

    def work(n, pos, neg, r):
        for _ in range(n):
            with opt.lock:
                item = draw(pos, neg, r)
            q.put(item)
        q.put(None)

    threads = []
    for n, seed in zip(counts, rng.integers(2**63, size=workers)):
        t = threading.Thread(target=work, daemon=True, args=(
            n, copy.deepcopy(positive, dict(shared)), copy.deepcopy(negative, dict(shared)),
            np.random.default_rng(seed)))
        t.start()
        threads.append(t)
    done = 0
    while done < workers:
        item = q.get()
        if item is None:
            done += 1
            continue
        yield item
    for t in threads:
        t.join()


def _snapshot(encoder):
    return {k: v.copy() for k, v in encoder.params.items()}


def _restore(encoder, snap):
    for k, v in snap.items():
        encoder.params[k][...] = v


def train_mcns(graph, encoder, config: TrainConfig, sampler=None, positive: PositiveSampler | None = None,
               validate=None, mcns_params: dict | None = None) -> TrainResult:
    """DFS-ordered training with the margin loss.

    For every central ``v`` in the schedule: one positive from ``positive``,
    ``k`` negatives from ``sampler`` (the Metropolis-Hastings sampler by
    default), and a hinge-loss update.  With ``literal_updates`` the
    parameters move after every single negative, so each chain step sees
    the freshly updated encoder.

    ``validate(encoder) -> float`` (higher is better) enables early stopping
    with ``config.patience`` epochs of patience; the best parameters are
    restored at the end.
    """
    rng = np.random.default_rng(config.seed)
    if positive is None:
        positive = PositiveSampler(graph, "walk_window", seed=rng.integers(2**63))
    if sampler is None:
        sampler = McnsSampler(graph, seed=rng.integers(2**63), **(mcns_params or {}))
    opt = Adam(encoder.params, config.learning_rate)
    result = TrainResult(encoder)
    stats = {"visits": 0, "negatives_drawn": 0, "skipped_pairs": 0, "updates": 0}
    best, best_epoch, best_snap = -np.inf, 0, None
    chain = getattr(sampler, "chain", None)
    k = config.negatives

    for epoch in range(config.epochs):
        schedule = [v for v in chain_schedule(graph, seed=rng.integers(2**63)) if graph.degrees[v] > 0]
        if chain is not None:
            chain.accept_count = chain.step_count = 0
        if schedule:
            sampler.begin_pass(schedule[0], encoder, rng)
        total, count = 0.0, 0
        group_c, group_p, group_n = [], [], []

        def flush():
            nonlocal total, count
            if not group_c:
                return
            negs, mask = _pack(group_n, k)
            loss = _gradient_step(encoder, opt, np.array(group_c), np.array(group_p), negs, mask, config, rng)
            stats["updates"] += 1
            total += float(loss.sum())
            count += len(group_c)
            group_c.clear(); group_p.clear(); group_n.clear()

        for v in schedule:
            stats["visits"] += 1
            u = positive.sample_context(v, rng)
            if config.literal_updates:
                for _ in range(k):
                    ns = sampler.sample(v, u, 1, encoder, rng)
                    if len(ns) == 0:
                        stats["skipped_pairs"] += 1
                        continue
                    stats["negatives_drawn"] += 1
                    group_c.append(v); group_p.append(u); group_n.append(ns)
                    flush()
                continue
            ns = sampler.sample(v, u, k, encoder, rng)
            if len(ns) == 0:
                stats["skipped_pairs"] += 1
                continue
            stats["negatives_drawn"] += len(ns)
            group_c.append(v); group_p.append(u); group_n.append(ns)
            if len(group_c) >= config.visits_per_update:
                flush()
        flush()

        result.loss_trace.append(total / max(count, 1))
        result.accept_trace.append(chain.accept_rate if chain is not None else None)
        if validate is not None:
            score = float(validate(encoder))
            result.valid_trace.append(score)
            if score > best:
                best, best_epoch, best_snap = score, epoch + 1, _snapshot(encoder)
            elif epoch + 1 - best_epoch >= config.patience:
                logger.info("early stop at epoch %d (best %d)", epoch + 1, best_epoch)
                break
        logger.debug("epoch %d loss %.5f", epoch + 1, result.loss_trace[-1])

    if best_snap is not None:
        _restore(encoder, best_snap)
    stats["epochs_run"] = len(result.loss_trace)
    stats["best_epoch"] = best_epoch or len(result.loss_trace)
    result.stats = stats
    return result


def write_metadata(path, config: TrainConfig, extra: dict | None = None) -> None:
    doc = {"config": asdict(config)}
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1, default=str)
