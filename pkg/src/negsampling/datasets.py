"""Benchmark data: MovieLens-100k (user-item) and Arxiv GR-QC (collaboration).

Neither dataset is redistributed with the package.  ``NEGSAMPLING_DATA``
(default ``./data``) is searched for

* ``ml-100k/u.data``   -- GroupLens ratings file, ``user item rating ts``
* ``ca-GrQc.txt``      -- SNAP edge list

``fetch_movielens`` can build ``u.data`` from the copy bundled inside the
``pytorch-widedeep`` wheel on PyPI when the GroupLens site is unreachable.
"""
from __future__ import annotations

import logging
import os
import subprocess
import sys
import tempfile
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, I, U, load_edge_list

logger = logging.getLogger(__name__)


def data_dir() -> Path:
    return Path(os.environ.get("NEGSAMPLING_DATA", "data"))


def movielens_path() -> Path:
    return data_dir() / "ml-100k" / "u.data"


def arxiv_path() -> Path:
    return data_dir() / "ca-GrQc.txt"


def fetch_movielens(dest: Path | None = None) -> Path:
    """Write ``ml-100k/u.data`` from the ratings bundled in the pytorch-widedeep wheel."""
    dest = Path(dest) if dest is not None else movielens_path()
    if dest.exists():
        return dest
    import pandas as pd

    member = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
                        "-q", "-d", tmp, "pytorch-widedeep==1.7.0"], check=True)
        wheel = next(Path(tmp).glob("pytorch_widedeep-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            zf.extract(member, tmp)
        df = pd.read_parquet(Path(tmp) / member)
    dest.parent.mkdir(parents=True, exist_ok=True)
    df[["user_id", "movie_id", "rating", "timestamp"]].to_csv(dest, sep="\t", header=False, index=False)
    logger.info("wrote %d ratings to %s", len(df), dest)
    return dest


@dataclass
class RecData:
    """All user-item interactions of a dataset over one fixed node numbering."""
    num_users: int
    num_items: int
    pairs: np.ndarray          # (E, 2) user node id, item node id
    node_ids: list

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def partition(self) -> np.ndarray:
        return np.concatenate([np.full(self.num_users, U, np.int8), np.full(self.num_items, I, np.int8)])

    def graph(self, pairs=None) -> Graph:
        return Graph(self.num_nodes, self.pairs if pairs is None else pairs,
                     partition=self.partition, node_ids=self.node_ids)


def load_movielens(path=None) -> RecData:
    """Every rating becomes an edge; users are nodes ``0..n_u-1``, items follow."""
    path = Path(path) if path is not None else movielens_path()
    raw = np.loadtxt(path, dtype=np.int64, usecols=(0, 1), ndmin=2)
    users, uinv = np.unique(raw[:, 0], return_inverse=True)
    items, iinv = np.unique(raw[:, 1], return_inverse=True)
    pairs = np.unique(np.stack([uinv, iinv + len(users)], axis=1), axis=0)
    ids = [f"u{x}" for x in users] + [f"i{x}" for x in items]
    return RecData(len(users), len(items), pairs, ids)


def rec_folds(data: RecData, parts: int = 11, seed=0) -> list[np.ndarray]:
    """Shuffle the interactions and cut them into ``parts`` near-equal index blocks.

    Blocks ``0..parts-2`` are the cross-validation folds; the last block is
    held out for validation.
    """
    perm = np.random.default_rng(seed).permutation(len(data.pairs))
    return np.array_split(perm, parts)


@dataclass
class RecFold:
    train: Graph
    test: np.ndarray
    valid: np.ndarray
    all_pairs: np.ndarray


def rec_fold(data: RecData, fold: int, parts: int = 11, seed=0) -> RecFold:
    blocks = rec_folds(data, parts, seed)
    if not 0 <= fold < parts - 1:
        raise ValueError(f"fold must lie in 0..{parts - 2}")
    valid = blocks[-1]
    test = blocks[fold]
    train = np.concatenate([b for i, b in enumerate(blocks[:-1]) if i != fold])
    return RecFold(data.graph(data.pairs[train]), data.pairs[test], data.pairs[valid], data.pairs)


def load_arxiv(path=None) -> Graph:
    path = Path(path) if path is not None else arxiv_path()
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found; place the SNAP ca-GrQc edge list there or set NEGSAMPLING_DATA")
    return largest_component(load_edge_list(path))


def largest_component(graph: Graph) -> Graph:
    """Induced subgraph on the largest connected component, ids renumbered in order."""
    comp = np.full(graph.num_nodes, -1)
    best, best_size = -1, 0
    c = 0
    for s in range(graph.num_nodes):
        if comp[s] >= 0:
            continue
        comp[s] = c
        stack, size = [s], 0
        while stack:
            x = stack.pop()
            size += 1
            for y in graph.adj(x):
                if comp[y] < 0:
                    comp[y] = c
                    stack.append(y)
        if size > best_size:
            best, best_size = c, size
        c += 1
    keep = np.flatnonzero(comp == best)
    if len(keep) == graph.num_nodes:
        return graph
    remap = np.full(graph.num_nodes, -1)
    remap[keep] = np.arange(len(keep))
    e = graph.edges()
    e = e[(remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)]
    return Graph(len(keep), remap[e], node_ids=[graph.node_ids[i] for i in keep],
                 stats={**graph.stats, "dropped_nodes": graph.num_nodes - len(keep)})
