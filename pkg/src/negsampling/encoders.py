"""Node encoders: lookup tables (dual or unique) and a mean-aggregator GNN.

Both expose the same small protocol used by samplers, training and
evaluation:

* ``vectors(nodes, role, rng=None)`` -> ``(len(nodes), dim)`` array
* ``forward(nodes, role, rng=None)`` -> ``(H, cache)``
* ``backward(cache, dH)`` -> list of ``(param_name, grad)``
* ``params`` -> dict of the trainable arrays (shared, updated in place)
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .optim import RowGrad

CENTRAL, CONTEXT = "central", "context"
ROLES = (CENTRAL, CONTEXT)


def _check_role(role):
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")


class LookupEncoder:
    """Embedding tables; in ``unique`` mode the context table aliases the central one."""

    def __init__(self, central_table: np.ndarray, context_table: np.ndarray | None = None, mode: str = "dual"):
        if mode not in ("dual", "unique"):
            raise ValueError("mode must be 'dual' or 'unique'")
        central_table = np.ascontiguousarray(central_table, dtype=np.float64)
        if central_table.ndim != 2 or central_table.shape[1] < 1:
            raise ValueError("embedding table must be N x d with d >= 1")
        self.mode = mode
        self.central_table = central_table
        if mode == "unique":
            self.context_table = central_table
            self.params = {CENTRAL: central_table}
        else:
            ctx = central_table.copy() if context_table is None else np.ascontiguousarray(context_table, dtype=np.float64)
            if ctx.shape != central_table.shape:
                raise ValueError("central and context tables must have the same shape")
            self.context_table = ctx
            self.params = {CENTRAL: central_table, CONTEXT: ctx}

    @property
    def num_nodes(self) -> int:
        return self.central_table.shape[0]

    @property
    def dim(self) -> int:
        return self.central_table.shape[1]

    def table(self, role: str) -> np.ndarray:
        _check_role(role)
        return self.central_table if role == CENTRAL else self.context_table

    def _param_name(self, role):
        return CENTRAL if self.mode == "unique" else role

    def vectors(self, nodes, role: str, rng=None) -> np.ndarray:
        return self.table(role)[nodes]

    def forward(self, nodes, role: str, rng=None):
        nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
        return self.table(role)[nodes], (role, nodes)

    def backward(self, cache, dH) -> list:
        role, nodes = cache
        return [(self._param_name(role), RowGrad(nodes, np.asarray(dH, dtype=np.float64).reshape(len(nodes), -1)))]

    def full_matrix(self, role: str, seed=None) -> np.ndarray:
        return self.table(role)

    def copy(self) -> "LookupEncoder":
        return LookupEncoder(self.central_table.copy(),
                             None if self.mode == "unique" else self.context_table.copy(), self.mode)


def init_lookup(num_nodes: int, dim: int, mode: str = "dual", seed=None) -> LookupEncoder:
    """Tables with i.i.d. entries uniform in ``[-0.5/dim, 0.5/dim]``."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    rng = np.random.default_rng(seed)
    bound = 0.5 / dim
    central = rng.uniform(-bound, bound, size=(num_nodes, dim))
    context = rng.uniform(-bound, bound, size=(num_nodes, dim)) if mode == "dual" else None
    return LookupEncoder(central, context, mode)


def embed(encoder, node: int, role: str = CENTRAL, rng=None) -> np.ndarray:
    """Embedding of one node in the given role."""
    _check_role(role)
    if not 0 <= node < encoder.num_nodes:
        raise IndexError(f"node {node} out of range for {encoder.num_nodes} nodes")
    return encoder.vectors(np.array([node]), role, rng)[0]


def score(encoder, v: int, u: int, rng=None) -> float:
    """Inner product of the central embedding of ``v`` and the context embedding of ``u``."""
    return float(embed(encoder, v, CENTRAL, rng) @ embed(encoder, u, CONTEXT, rng))


class SageEncoder:
    """GraphSAGE-style encoder with a mean aggregator over self + sampled neighbors.

    Each layer computes ``h <- act(mean(h_self, h_n1, ..., h_nc) @ W + b)``
    where ``c = min(neighbor_sample_size, deg)`` neighbors are drawn with
    replacement; the last layer has no ReLU.  Embeddings are unique: both
    roles read the same output.
    """

    def __init__(self, graph, features, weights, biases, neighbor_sample_size=10):
        if len(weights) != len(biases) or not 1 <= len(weights) <= 2:
            raise ValueError("SageEncoder supports 1 or 2 layers")
        dims = [np.shape(features)[1]] + [w.shape[1] for w in weights]
        for w, b, d_in, d_out in zip(weights, biases, dims[:-1], dims[1:]):
            if w.shape != (d_in, d_out) or np.shape(b) != (d_out,):
                raise ValueError("layer dimensions do not chain")
        self.graph = graph
        self.neighbor_sample_size = int(neighbor_sample_size)
        self.params = {"features": np.ascontiguousarray(features, dtype=np.float64)}
        for i, (w, b) in enumerate(zip(weights, biases)):
            self.params[f"W{i}"] = np.array(w, dtype=np.float64)
            self.params[f"b{i}"] = np.array(b, dtype=np.float64)
        self.mode = "unique"

    @property
    def num_layers(self) -> int:
        return sum(1 for k in self.params if k.startswith("W"))

    @property
    def num_nodes(self) -> int:
        return self.params["features"].shape[0]

    @property
    def dim(self) -> int:
        return self.params[f"W{self.num_layers - 1}"].shape[1]

    def _expand(self, nodes, rng, graph):
        """Children (self first, then sampled neighbors) and their parent segment ids."""
        g = graph if graph is not None else self.graph
        deg = g.degrees[nodes]
        cnt = np.minimum(deg, self.neighbor_sample_size)
        total = len(nodes) + int(cnt.sum())
        children = np.empty(total, dtype=np.int64)
        seg = np.empty(total, dtype=np.int64)
        children[:len(nodes)] = nodes
        seg[:len(nodes)] = np.arange(len(nodes))
        parent = np.repeat(np.arange(len(nodes)), cnt)
        off = (rng.random(len(parent)) * deg[parent]).astype(np.int64)
        children[len(nodes):] = g.indices[g.indptr[nodes[parent]] + off]
        seg[len(nodes):] = parent
        return children, seg, cnt + 1

    def forward(self, nodes, role: str = CENTRAL, rng=None, graph=None):
        _check_role(role)
        rng = np.random.default_rng(rng)
        levels = [np.atleast_1d(np.asarray(nodes, dtype=np.int64))]
        plans = []
        for _ in range(self.num_layers):
            children, seg, size = self._expand(levels[-1], rng, graph)
            plans.append((seg, size))
            levels.append(children)
        # plans[i] aggregates levels[i+1] into levels[i]; evaluate from the leaves up
        h = self.params["features"][levels[-1]]
        acts = []
        for depth in range(self.num_layers - 1, -1, -1):
            layer = self.num_layers - 1 - depth
            seg, size = plans[depth]
            agg = np.zeros((len(levels[depth]), h.shape[1]))
            np.add.at(agg, seg, h)
            agg /= size[:, None]
            z = agg @ self.params[f"W{layer}"] + self.params[f"b{layer}"]
            last = layer == self.num_layers - 1
            acts.append((agg, z, last))
            h = z if last else np.maximum(z, 0.0)
        return h, (levels, plans, acts)

    def backward(self, cache, dH) -> list:
        levels, plans, acts = cache
        grads = []
        d = np.asarray(dH, dtype=np.float64)
        for layer in range(self.num_layers - 1, -1, -1):
            depth = self.num_layers - 1 - layer
            agg, z, last = acts[layer]
            if not last:
                d = d * (z > 0)
            grads.append((f"W{layer}", agg.T @ d))
            grads.append((f"b{layer}", d.sum(axis=0)))
            dagg = d @ self.params[f"W{layer}"].T
            seg, size = plans[depth]
            d = dagg[seg] / size[seg][:, None]
        grads.append(("features", RowGrad(levels[-1], d)))
        return grads

    def vectors(self, nodes, role: str = CENTRAL, rng=None) -> np.ndarray:
        return self.forward(nodes, role, rng)[0]

    def full_matrix(self, role: str = CENTRAL, seed=None, batch: int = 4096) -> np.ndarray:
        rng = np.random.default_rng(seed)
        n = self.num_nodes
        return np.concatenate([self.vectors(np.arange(s, min(s + batch, n)), role, rng)
                               for s in range(0, n, batch)]) if n else np.zeros((0, self.dim))

    def copy(self) -> "SageEncoder":
        L = self.num_layers
        return SageEncoder(self.graph, self.params["features"].copy(),
                           [self.params[f"W{i}"].copy() for i in range(L)],
                           [self.params[f"b{i}"].copy() for i in range(L)], self.neighbor_sample_size)


def init_sage(graph, dim: int, num_layers: int = 2, feature_dim: int | None = None,
              neighbor_sample_size: int = 10, seed=None) -> SageEncoder:
    """Free learnable base features (``f = dim`` by default) and Glorot-uniform layers."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    rng = np.random.default_rng(seed)
    f = feature_dim or dim
    feats = rng.uniform(-0.5 / f, 0.5 / f, size=(graph.num_nodes, f))
    dims = [f] + [dim] * num_layers
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-lim, lim, size=(a, b)))
        biases.append(np.zeros(b))
    return SageEncoder(graph, feats, weights, biases, neighbor_sample_size)


def sage_embed(encoder: SageEncoder, graph, node: int, seed=None) -> np.ndarray:
    if not 0 <= node < encoder.num_nodes:
        raise IndexError(f"node {node} out of range")
    return encoder.forward(np.array([node]), CENTRAL, np.random.default_rng(seed), graph=graph)[0][0]


def export_embeddings(encoder, node_ids, path, role: str = CENTRAL, seed=None) -> None:
    """word2vec text format: ``N d`` header then ``<id> v1 ... vd`` with 6 decimals."""
    mat = encoder.full_matrix(role, seed) if isinstance(encoder, SageEncoder) else encoder.table(role)
    n, d = mat.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for nid, row in zip(node_ids, mat):
            fh.write(nid + " " + " ".join(f"{x:.6f}" for x in row) + "\n")


class EmbeddingFormatError(ValueError):
    pass


def load_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError(f"{path}: header must be 'N d'")
        n, d = int(header[0]), int(header[1])
        ids, rows = [], []
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected {d} values, got {len(parts) - 1}")
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(ids) != n:
        raise EmbeddingFormatError(f"{path}: header says {n} rows, found {len(ids)}")
    return ids, np.array(rows, dtype=np.float64).reshape(n, d)


def encoder_from_files(central_path, context_path=None) -> tuple[list[str], LookupEncoder]:
    """Rebuild a lookup encoder from exported tables; without a context file the roles share one table."""
    ids, central = load_embeddings(central_path)
    if context_path is None or not Path(context_path).exists():
        return ids, LookupEncoder(central, mode="unique")
    ids2, context = load_embeddings(context_path)
    if ids2 != ids or context.shape != central.shape:
        raise EmbeddingFormatError("central and context embedding files disagree")
    return ids, LookupEncoder(central, context, mode="dual")
