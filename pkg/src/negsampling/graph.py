"""Graph storage, edge-list ingestion, traversals and the link-prediction split."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

U, I = 0, 1
_TAGS = {"U": U, "I": I}


class GraphFormatError(ValueError):
    """Raised for malformed edge, partition or label files."""


class DisconnectedGraphError(ValueError):
    pass


class Graph:
    """Immutable compressed adjacency over node ids ``0..N-1``.

    Neighbor lists are stored CSR-style (``indptr``/``indices``), sorted, with
    no duplicates and no self-loops.  Storage is always symmetrized; when the
    source was directed the original arcs are kept in ``arcs``.
    """

    def __init__(self, num_nodes, edges, directed=False, partition=None, node_ids=None, stats=None):
        self.num_nodes = int(num_nodes)
        self.directed_source = bool(directed)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= self.num_nodes):
            raise ValueError("edge endpoint out of range")
        edges = edges[edges[:, 0] != edges[:, 1]]

        if directed:
            self.arcs = np.unique(edges, axis=0) if len(edges) else edges
        both = np.concatenate([edges, edges[:, ::-1]]) if len(edges) else edges
        both = np.unique(both, axis=0) if len(both) else both
        if not directed:
            self.arcs = both

        counts = np.bincount(both[:, 0], minlength=self.num_nodes) if len(both) else np.zeros(self.num_nodes, np.int64)
        self.indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=self.indptr[1:])
        # np.unique sorts lexicographically, so rows come out grouped and sorted
        self.indices = both[:, 1].copy() if len(both) else np.zeros(0, np.int64)
        self.degrees = counts.astype(np.int64)
        for a in (self.indptr, self.indices, self.degrees, self.arcs):
            a.flags.writeable = False

        if partition is not None:
            partition = np.asarray(partition, dtype=np.int8)
            if partition.shape != (self.num_nodes,):
                raise ValueError("partition must tag every node")
            src = np.repeat(np.arange(self.num_nodes), self.degrees)
            if np.any(partition[src] == partition[self.indices]):
                raise GraphFormatError("bipartite partition violated by an edge inside one side")
            partition.flags.writeable = False
        self.partition = partition
        self.node_ids = list(node_ids) if node_ids is not None else [str(i) for i in range(self.num_nodes)]
        self.stats = dict(stats or {})

    def adj(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.adj(u)
        i = np.searchsorted(nbrs, v)
        return bool(i < len(nbrs) and nbrs[i] == v)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    @property
    def is_bipartite(self) -> bool:
        return self.partition is not None

    def edges(self) -> np.ndarray:
        """Undirected edges as an ``(E, 2)`` array with ``u < v``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def nodes_in(self, tag: str) -> np.ndarray:
        if self.partition is None:
            return np.arange(self.num_nodes)
        return np.flatnonzero(self.partition == _TAGS[tag])

    def structurally_equal(self, other: "Graph") -> bool:
        same_part = (self.partition is None and other.partition is None) or (
            self.partition is not None and other.partition is not None
            and np.array_equal(self.partition, other.partition))
        return (self.num_nodes == other.num_nodes and same_part
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.arcs, other.arcs))

    def __repr__(self):
        kind = "bipartite " if self.is_bipartite else ""
        return f"<{kind}Graph N={self.num_nodes} E={self.num_edges}>"


@dataclass
class LinkSplit:
    residual: Graph
    test_pos: np.ndarray
    test_neg: np.ndarray
    requested_fraction: float
    achieved_fraction: float

    def to_json(self, path) -> None:
        ids = self.residual.node_ids
        doc = {
            "achieved_fraction": self.achieved_fraction,
            "requested_fraction": self.requested_fraction,
            "test_neg": [[ids[a], ids[b]] for a, b in self.test_neg],
            "test_pos": [[ids[a], ids[b]] for a, b in self.test_pos],
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_split_pairs(path, id_index: dict) -> tuple[np.ndarray, np.ndarray]:
    """Read ``test_pos``/``test_neg`` from a split JSON file, mapping ids through ``id_index``."""
    doc = json.loads(Path(path).read_text())
    out = []
    for key in ("test_pos", "test_neg"):
        try:
            out.append(np.array([[id_index[a], id_index[b]] for a, b in doc[key]], dtype=np.int64).reshape(-1, 2))
        except KeyError as e:
            raise GraphFormatError(f"split references unknown node {e}") from None
    return out[0], out[1]


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split()


def load_edge_list(path, directed: bool = False, partition_path=None) -> Graph:
    """Load a ``src dst [weight]`` edge list.

    Node ids are compacted to ``0..N-1`` in first-appearance order and the
    original ids are kept on ``graph.node_ids``.  Self-loops are dropped and
    counted in ``graph.stats``; duplicate edges collapse.
    """
    index: dict[str, int] = {}
    src, dst = [], []
    self_loops = 0
    for lineno, parts in _data_lines(path):
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"{path}:{lineno}: expected 'src dst [weight]', got {' '.join(parts)!r}")
        if len(parts) == 3:
            try:
                float(parts[2])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: bad weight {parts[2]!r}") from None
        a = index.setdefault(parts[0], len(index))
        b = index.setdefault(parts[1], len(index))
        if a == b:
            self_loops += 1
            continue
        src.append(a)
        dst.append(b)

    partition = None
    if partition_path is not None:
        partition = np.full(len(index), -1, dtype=np.int8)
        for lineno, parts in _data_lines(partition_path):
            if len(parts) != 2 or parts[1] not in _TAGS:
                raise GraphFormatError(f"{partition_path}:{lineno}: expected 'node U|I'")
            if parts[0] not in index:
                raise GraphFormatError(f"{partition_path}:{lineno}: unknown node {parts[0]!r}")
            partition[index[parts[0]]] = _TAGS[parts[1]]
        if np.any(partition < 0):
            missing = [k for k, i in index.items() if partition[i] < 0][:5]
            raise GraphFormatError(f"{partition_path}: no partition tag for nodes {missing}")

    edges = np.stack([np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)], axis=1)
    g = Graph(len(index), edges, directed=directed, partition=partition, node_ids=list(index),
              stats={"self_loops": self_loops, "lines": len(src) + self_loops})
    if self_loops:
        logger.info("dropped %d self-loops from %s", self_loops, path)
    return g


def load_labels(path, id_index: dict) -> dict[int, list[str]]:
    """Read ``node<TAB>label1,label2,...`` lines into ``{node: [labels]}``."""
    labels = {}
    for lineno, parts in _data_lines(path):
        if len(parts) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected 'node label1,label2,...'")
        if parts[0] not in id_index:
            raise GraphFormatError(f"{path}:{lineno}: unknown node {parts[0]!r}")
        labels[id_index[parts[0]]] = [x for x in parts[1].split(",") if x]
    return labels


def write_edge_list(graph: Graph, path, partition_path=None) -> None:
    ids = graph.node_ids
    pairs = graph.arcs if graph.directed_source else graph.edges()
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in pairs:
            fh.write(f"{ids[a]}\t{ids[b]}\n")
    if partition_path is not None and graph.partition is not None:
        # isolated nodes are absent from the edge list, so they get no tag either
        with open(partition_path, "w", encoding="utf-8") as fh:
            for v in np.flatnonzero(graph.degrees > 0):
                fh.write(f"{ids[v]}\t{'UI'[graph.partition[v]]}\n")


def dfs_sequence(graph: Graph, start: int = 0, seed=None) -> list[int]:
    """Traversal where consecutive entries are adjacent in the graph.

    Each node is appended on entry and again after returning from every
    unvisited neighbor.  Components not reached from ``start`` are restarted
    from the lowest-id unvisited node.  ``seed=None`` visits neighbors in
    ascending order; otherwise each neighbor list is shuffled with ``seed``.
    """
    n = graph.num_nodes
    if n == 0:
        return []
    rng = None if seed is None else np.random.default_rng(seed)
    visited = np.zeros(n, dtype=bool)
    out: list[int] = []

    def order(x):
        nbrs = graph.adj(x)
        return iter(nbrs.tolist() if rng is None else nbrs[rng.permutation(len(nbrs))].tolist())

    roots = [start] + list(range(n))
    for root in roots:
        if visited[root]:
            continue
        visited[root] = True
        out.append(root)
        stack = [(root, order(root))]
        while stack:
            x, it = stack[-1]
            for y in it:
                if not visited[y]:
                    visited[y] = True
                    out.append(y)
                    stack.append((y, order(y)))
                    break
            else:
                stack.pop()
                if stack:
                    out.append(stack[-1][0])
    return out


def random_walks(graph: Graph, walks_per_node: int, walk_length: int, seed=None) -> list[list[int]]:
    """Uniform-neighbor random walks, ``walks_per_node`` from every non-isolated node."""
    if walk_length < 2:
        raise ValueError("walk_length must be at least 2")
    rng = np.random.default_rng(seed)
    starts = np.flatnonzero(graph.degrees > 0)
    skipped = graph.num_nodes - len(starts)
    if skipped:
        logger.warning("random_walks: skipped %d isolated nodes", skipped)
    indptr, indices, deg = graph.indptr, graph.indices, graph.degrees
    walks = []
    for _ in range(walks_per_node):
        cur = rng.permutation(starts)
        steps = [cur]
        for _ in range(walk_length - 1):
            off = (rng.random(len(cur)) * deg[cur]).astype(np.int64)
            cur = indices[indptr[cur] + off]
            steps.append(cur)
        walks.extend(np.stack(steps, axis=1).tolist())
    return walks


def is_connected(graph: Graph, edges=None) -> bool:
    """BFS connectivity check, optionally over a replacement edge set."""
    g = graph if edges is None else Graph(graph.num_nodes, edges)
    if g.num_nodes == 0:
        return True
    seen = np.zeros(g.num_nodes, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        nxt = []
        for x in frontier:
            for y in g.adj(x):
                if not seen[y]:
                    seen[y] = True
                    nxt.append(y)
        frontier = nxt
    return bool(seen.all())


def _random_spanning_tree(graph: Graph, edges: np.ndarray, rng) -> np.ndarray:
    """Mask over ``edges`` selecting a spanning tree built by Kruskal on a random edge order."""
    parent = np.arange(graph.num_nodes)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    in_tree = np.zeros(len(edges), dtype=bool)
    joined = 0
    for i in rng.permutation(len(edges)):
        a, b = find(edges[i, 0]), find(edges[i, 1])
        if a != b:
            parent[a] = b
            in_tree[i] = True
            joined += 1
            if joined == graph.num_nodes - 1:
                break
    return in_tree


def split_link_prediction(graph: Graph, holdout_fraction: float, seed=None) -> LinkSplit:
    """Hold out a fraction of edges while keeping the residual graph connected.

    A random spanning tree is protected; the held-out edges are drawn uniformly
    from the remaining edges.  Negatives are non-edges of the input graph,
    drawn uniformly by rejection, as many as positives.
    """
    if not 0 < holdout_fraction < 1:
        raise ValueError("holdout_fraction must lie in (0, 1)")
    if not is_connected(graph):
        raise DisconnectedGraphError("link-prediction split requires a connected graph")
    rng = np.random.default_rng(seed)
    edges = graph.edges()
    # floor, so the achieved fraction never exceeds the requested one
    target = int(np.floor(holdout_fraction * len(edges) + 1e-9))
    if target == 0:
        raise ValueError("holdout target rounds to zero edges")

    in_tree = _random_spanning_tree(graph, edges, rng)
    free = np.flatnonzero(~in_tree)
    if len(free) < target:
        logger.warning("only %d removable edges, wanted %d", len(free), target)
        target = len(free)
    removed = rng.choice(free, size=target, replace=False) if target else np.zeros(0, np.int64)
    keep = np.ones(len(edges), dtype=bool)
    keep[removed] = False
    test_pos = edges[removed]

    n = graph.num_nodes
    non_edges = n * (n - 1) // 2 - len(edges)
    if non_edges < len(test_pos):
        raise ValueError(f"graph has {non_edges} non-edges, cannot draw {len(test_pos)} negatives")
    seen = set()
    neg = []
    while len(neg) < len(test_pos):
        a, b = rng.integers(n, size=2)
        if a == b:
            continue
        a, b = (a, b) if a < b else (b, a)
        if (a, b) in seen or graph.has_edge(a, b):
            continue
        seen.add((a, b))
        neg.append((a, b))

    residual = Graph(n, edges[keep], partition=graph.partition, node_ids=graph.node_ids)
    return LinkSplit(residual=residual, test_pos=test_pos, test_neg=np.array(neg, dtype=np.int64).reshape(-1, 2),
                     requested_fraction=float(holdout_fraction),
                     achieved_fraction=len(test_pos) / len(edges))


def to_bipartite_contrast(graph: Graph) -> Graph:
    """Split node ``i`` into central ``i`` and context ``N + i``.

    Every arc ``i -> j`` (both directions for undirected input) becomes the
    edge ``central(i) - context(j)``.
    """
    n = graph.num_nodes
    arcs = graph.arcs
    edges = np.stack([arcs[:, 0], arcs[:, 1] + n], axis=1) if len(arcs) else np.zeros((0, 2), np.int64)
    part = np.concatenate([np.full(n, U, np.int8), np.full(n, I, np.int8)])
    ids = [f"v:{x}" for x in graph.node_ids] + [f"u:{x}" for x in graph.node_ids]
    return Graph(2 * n, edges, partition=part, node_ids=ids)


# synthetic fixtures

def path_graph(n: int) -> Graph:
    return Graph(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(n: int) -> Graph:
    """Center 0 with leaves ``1..n-1``."""
    return Graph(n, [(0, i) for i in range(1, n)])


def barabasi_albert(n: int, m: int, seed=None) -> Graph:
    """Preferential attachment; starts from a star on ``m + 1`` nodes so the result is connected."""
    if not 1 <= m < n:
        raise ValueError("need 1 <= m < n")
    rng = np.random.default_rng(seed)
    edges = [(0, i) for i in range(1, m + 1)]
    targets = [0] * m + list(range(1, m + 1))
    for v in range(m + 1, n):
        chosen = set()
        while len(chosen) < m:
            chosen.add(targets[rng.integers(len(targets))])
        for t in sorted(chosen):
            edges.append((v, t))
            targets.extend((v, t))
    return Graph(n, edges)


def random_bipartite(n_u: int, n_i: int, p: float, seed=None) -> Graph:
    """Random bipartite graph; users ``0..n_u-1`` then items. Every user gets at least one item."""
    rng = np.random.default_rng(seed)
    mask = rng.random((n_u, n_i)) < p
    for a in np.flatnonzero(~mask.any(axis=1)):
        mask[a, rng.integers(n_i)] = True
    uu, ii = np.nonzero(mask)
    part = np.concatenate([np.full(n_u, U, np.int8), np.full(n_i, I, np.int8)])
    return Graph(n_u + n_i, np.stack([uu, ii + n_u], axis=1), partition=part)
