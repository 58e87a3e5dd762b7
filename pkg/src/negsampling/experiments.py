"""End-to-end runs behind the benchmark checks: MovieLens folds, sweeps and link prediction.

Every sampler in a comparison shares one ``Protocol`` (encoder, positive
sampler, loss, schedule, epochs, exclusions); only the negative sampler
changes.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from .datasets import RecData, rec_fold
from .encoders import init_lookup
from .evaluation import eval_link_prediction, eval_recommendation
from .graph import Graph, split_link_prediction
from .sampling import PositiveSampler, make_negative_sampler
from .training import TrainConfig, train_mcns

logger = logging.getLogger(__name__)


@dataclass
class Protocol:
    positive: str = "walk_window"
    window: int = 5
    dim: int = 256
    learning_rate: float = 1e-3
    margin: float = 0.1
    negatives: int = 1
    epochs: int = 40
    patience: int = 10
    # the user's own training items are never drawn as its negatives
    exclude_neighbors: bool = True
    steps_per_sample: int = 10
    dns_candidates: int = 5
    beta: float = 0.75
    alpha: float = 0.75

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, dim=self.dim, margin=self.margin,
                           negatives=self.negatives, epochs=self.epochs, loss="hinge", seed=seed,
                           patience=self.patience)


MOVIELENS = Protocol()
# sweeps run on one fold with a shorter fixed budget
SWEEP = replace(MOVIELENS, epochs=20, patience=20)
LINK_PREDICTION = replace(MOVIELENS, epochs=20, patience=20)


def train_encoder(graph: Graph, sampler_name: str, protocol: Protocol, seed: int, validate=None):
    """Train a dual lookup encoder on ``graph`` with the named negative sampler."""
    ss = np.random.SeedSequence(seed).spawn(3)
    enc = init_lookup(graph.num_nodes, protocol.dim, "dual", seed=ss[0])
    pos = PositiveSampler(graph, protocol.positive, window=protocol.window, seed=ss[1])
    neg = make_negative_sampler(sampler_name, graph, beta=protocol.beta, alpha=protocol.alpha,
                                dns_candidates=protocol.dns_candidates, margin=protocol.margin,
                                seed=ss[2], exclude_neighbors=protocol.exclude_neighbors,
                                steps_per_sample=protocol.steps_per_sample)
    result = train_mcns(graph, enc, protocol.train_config(seed), sampler=neg, positive=pos, validate=validate)
    return enc, result


def run_rec_fold(data: RecData, fold: int, sampler_name: str, protocol: Protocol = MOVIELENS,
                 seed: int = 0, M="ALL") -> dict:
    """Train on one fold with validation early stopping and score the test block."""
    f = rec_fold(data, fold)
    g = f.train

    def validate(enc):
        return eval_recommendation(enc, f.valid, M, graph=g, exclude_pairs=f.all_pairs, seed=seed)["mrr"]

    enc, result = train_encoder(g, sampler_name, protocol, seed, validate)
    report = eval_recommendation(enc, f.test, M, graph=g, exclude_pairs=f.all_pairs, seed=seed)
    out = dict(report.metrics)
    out.update(fold=fold, sampler=sampler_name, seed=seed, best_epoch=result.stats["best_epoch"],
               valid_mrr=max(result.valid_trace) if result.valid_trace else None)
    logger.info("fold %d %s mrr %.4f (epoch %s)", fold, sampler_name, out["mrr"], out["best_epoch"])
    return out


def run_rec_cv(data: RecData, samplers=("mcns", "uniform", "degree_power"), folds=range(10),
               protocol: Protocol = MOVIELENS, seed: int = 0) -> dict:
    """Per-sampler fold results and mean MRR."""
    out = {}
    for name in samplers:
        runs = [run_rec_fold(data, f, name, protocol, seed) for f in folds]
        out[name] = {"runs": runs, "mean_mrr": float(np.mean([r["mrr"] for r in runs]))}
    return out


def sweep(data: RecData, sampler_name: str, field: str, values, seeds=(0, 1, 2), fold: int = 0,
          protocol: Protocol = SWEEP) -> dict:
    """Mean test MRR over seeds for each value of one protocol field."""
    means = {}
    for val in values:
        p = replace(protocol, **{field: val})
        mrrs = []
        for s in seeds:
            f = rec_fold(data, fold)
            enc, _ = train_encoder(f.train, sampler_name, p, s)
            mrrs.append(eval_recommendation(enc, f.test, "ALL", graph=f.train, exclude_pairs=f.all_pairs)["mrr"])
        means[val] = float(np.mean(mrrs))
        logger.info("%s %s=%s mean mrr %.4f", sampler_name, field, val, means[val])
    return means


def strictly_decreasing(values) -> bool:
    v = list(values)
    return all(b < a for a, b in zip(v, v[1:]))


def interior_maximum(values) -> bool:
    v = list(values)
    i = int(np.argmax(v))
    return 0 < i < len(v) - 1 and v[i] > v[0] and v[i] > v[-1]


def run_link_prediction(graph: Graph, samplers=("mcns", "uniform", "degree_power", "dns", "warp"),
                        holdout_fraction: float = 0.3, protocol: Protocol = LINK_PREDICTION,
                        seed: int = 0, splits: int = 5) -> dict:
    """Mean AUC (in points) per sampler over ``splits`` seeded splits shared by all samplers."""
    aucs = {name: [] for name in samplers}
    for i in range(splits):
        split = split_link_prediction(graph, holdout_fraction, seed + i)
        for name in samplers:
            enc, _ = train_encoder(split.residual, name, protocol, seed + i)
            aucs[name].append(100.0 * eval_link_prediction(enc, split)["auc"])
            logger.info("lp split %d %s auc %.2f", i, name, aucs[name][-1])
    return {name: float(np.mean(v)) for name, v in aucs.items()}


def protocol_dict(protocol: Protocol) -> dict:
    return asdict(protocol)
