"""Positive samplers and negative sampling strategies.

All negative samplers share one call shape::

    sampler.sample(v, u_pos, k, encoder, rng) -> array of at most k node ids

and draw only from their candidate set: the item side ``I`` of a bipartite
graph, every node otherwise.  The central node ``v`` itself is never
returned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .encoders import CENTRAL, CONTEXT
from .graph import Graph, dfs_sequence, random_walks

logger = logging.getLogger(__name__)

SAMPLERS = ("uniform", "degree_power", "dns", "warp", "inverse_dns", "mcns")


def candidate_nodes(graph: Graph) -> np.ndarray:
    return graph.nodes_in("I") if graph.is_bipartite else np.arange(graph.num_nodes)


def central_nodes(graph: Graph) -> np.ndarray:
    return graph.nodes_in("U") if graph.is_bipartite else np.arange(graph.num_nodes)


class PositiveSampler:
    """Draws positive pairs ``(v, u)`` from the graph.

    ``walk_window`` pairs every walk position with the nodes at most
    ``window`` steps away on the same walk (DeepWalk); ``direct_edge`` uses
    the edges themselves (LINE).  On bipartite graphs only ``U -> I`` pairs
    are produced, so walk offsets are odd.
    """

    def __init__(self, graph: Graph, kind: str = "walk_window", window: int = 5,
                 walk_length: int = 40, walks_per_node: int = 1, seed=None):
        if kind not in ("walk_window", "direct_edge"):
            raise ValueError(f"unknown positive sampler {kind!r}")
        if window < 1:
            raise ValueError("window must be at least 1")
        if graph.num_edges == 0:
            raise ValueError("positive sampling needs at least one edge")
        self.graph = graph
        self.kind = kind
        self.window = window
        self.walk_length = max(walk_length, window + 1)
        self.walks_per_node = walks_per_node
        self._seed_rng = np.random.default_rng(seed)
        self._pairs = None
        self._cursor = 0
        offsets = np.arange(1, window + 1)
        self.offsets = offsets[offsets % 2 == 1] if graph.is_bipartite else offsets
        if graph.is_bipartite:
            self._arcs = graph.arcs[graph.partition[graph.arcs[:, 0]] == 0]
        else:
            self._arcs = graph.arcs

    @property
    def num_pairs(self) -> int:
        """Number of distinct positive arcs; one pass over them is one epoch of Algorithm-1 training."""
        return len(self._arcs)

    def _refill(self):
        walks = np.array(random_walks(self.graph, self.walks_per_node, self.walk_length,
                                      seed=self._seed_rng.integers(2**63)), dtype=np.int64)
        chunks = []
        for d in self.offsets:
            a, b = walks[:, :-d].ravel(), walks[:, d:].ravel()
            chunks.append(np.stack([a, b], axis=1))
            chunks.append(np.stack([b, a], axis=1))
        pairs = np.concatenate(chunks)
        if self.graph.is_bipartite:
            pairs = pairs[self.graph.partition[pairs[:, 0]] == 0]
        self._pairs = pairs[self._seed_rng.permutation(len(pairs))]
        self._cursor = 0

    def sample(self, rng) -> tuple[int, int]:
        """One pair; centers come out proportional to degree (walk stationarity / edge counts)."""
        if self.kind == "direct_edge":
            a, b = self._arcs[rng.integers(len(self._arcs))]
            return int(a), int(b)
        if self._pairs is None or self._cursor >= len(self._pairs):
            self._refill()
        a, b = self._pairs[self._cursor]
        self._cursor += 1
        return int(a), int(b)

    def sample_batch(self, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
        pairs = np.array([self.sample(rng) for _ in range(m)], dtype=np.int64)
        return pairs[:, 0], pairs[:, 1]

    def sample_context(self, v: int, rng) -> int:
        """One positive for a given center ``v``."""
        g = self.graph
        if g.degrees[v] == 0:
            raise ValueError(f"node {v} is isolated and has no positives")
        steps = 1 if self.kind == "direct_edge" else int(self.offsets[rng.integers(len(self.offsets))])
        x = v
        for _ in range(steps):
            x = g.indices[g.indptr[x] + rng.integers(g.degrees[x])]
        return int(x)


def sample_positive(sampler: PositiveSampler, graph: Graph, rng) -> tuple[int, int]:
    return sampler.sample(rng)


class NegativeSampler:
    name = "base"

    def __init__(self, graph: Graph, exclude_neighbors: bool = False):
        self.graph = graph
        self.candidates = candidate_nodes(graph)
        if len(self.candidates) == 0:
            raise ValueError("empty candidate set")
        self.exclude_neighbors = exclude_neighbors
        self.stats = {"draws": 0, "failures": 0}

    def excluded(self, v: int, x: int) -> bool:
        return x == v or (self.exclude_neighbors and self.graph.has_edge(v, x))

    def _uniform(self, v, rng) -> int:
        for _ in range(10_000):
            x = int(self.candidates[rng.integers(len(self.candidates))])
            if not self.excluded(v, x):
                return x
        raise RuntimeError(f"no admissible negative for node {v}")

    def begin_pass(self, v: int, encoder, rng) -> None:
        pass

    def sample(self, v: int, u_pos: int, k: int, encoder, rng) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {"sampler": self.name}


@dataclass
class DegreeDist:
    nodes: np.ndarray
    beta: float
    cumulative: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.diff(self.cumulative, prepend=0.0)


def build_degree_dist(graph: Graph, beta: float, nodes=None) -> DegreeDist:
    nodes = candidate_nodes(graph) if nodes is None else np.asarray(nodes)
    deg = graph.degrees[nodes].astype(np.float64)
    with np.errstate(divide="ignore"):
        w = np.ones_like(deg) if beta == 0 else deg ** beta
    if not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError(f"degree^{beta} weights are not a valid distribution (zero-degree candidates?)")
    cum = np.cumsum(w) / w.sum()
    cum[-1] = 1.0
    return DegreeDist(nodes, float(beta), cum)


def sample_degree_power(dist: DegreeDist, rng) -> int:
    return int(dist.nodes[np.searchsorted(dist.cumulative, rng.random(), side="right")])


class DegreePowerSampler(NegativeSampler):
    """``p_n(u) ~ deg(u)^beta``; ``beta = 0`` is uniform (RNS)."""
    name = "degree_power"

    def __init__(self, graph, beta: float = 0.75, exclude_neighbors=False):
        super().__init__(graph, exclude_neighbors)
        self.beta = beta
        self.dist = build_degree_dist(graph, beta, self.candidates)

    def sample(self, v, u_pos, k, encoder, rng):
        out = np.empty(k, dtype=np.int64)
        for i in range(k):
            x = sample_degree_power(self.dist, rng)
            while self.excluded(v, x):
                x = sample_degree_power(self.dist, rng)
            out[i] = x
        self.stats["draws"] += k
        return out

    def config(self):
        return {"sampler": self.name, "beta": self.beta}


class UniformSampler(NegativeSampler):
    name = "uniform"

    def sample(self, v, u_pos, k, encoder, rng):
        self.stats["draws"] += k
        return np.array([self._uniform(v, rng) for _ in range(k)], dtype=np.int64)


def _select(encoder, v, cands, largest: bool, rng=None) -> int:
    cv = encoder.vectors(np.array([v]), CENTRAL, rng)[0]
    s = encoder.vectors(cands, CONTEXT, rng) @ cv
    best = s.max() if largest else s.min()
    return int(np.min(cands[s == best]))


def dns_sample(encoder, v: int, candidate_size: int, rng, candidates=None, largest: bool = True) -> int:
    """Draw ``candidate_size`` uniform candidates and keep the best scoring one (lowest id on ties)."""
    if candidate_size < 1:
        raise ValueError("candidate size must be at least 1")
    cands = np.arange(encoder.num_nodes) if candidates is None else np.asarray(candidates)
    cands = cands[cands != v]
    if len(cands) == 0:
        raise ValueError("empty candidate set")
    drawn = cands[rng.integers(len(cands), size=candidate_size)]
    return _select(encoder, v, drawn, largest, rng)


def inverse_dns_sample(encoder, v: int, candidate_size: int, rng, candidates=None) -> int:
    return dns_sample(encoder, v, candidate_size, rng, candidates, largest=False)


class DnsSampler(NegativeSampler):
    name = "dns"
    largest = True

    def __init__(self, graph, candidate_size: int = 5, exclude_neighbors=False):
        super().__init__(graph, exclude_neighbors)
        if candidate_size < 1:
            raise ValueError("candidate size must be at least 1")
        self.candidate_size = candidate_size

    def sample(self, v, u_pos, k, encoder, rng):
        out = np.empty(k, dtype=np.int64)
        for i in range(k):
            drawn = np.array([self._uniform(v, rng) for _ in range(self.candidate_size)], dtype=np.int64)
            out[i] = _select(encoder, v, drawn, self.largest, rng)
        self.stats["draws"] += k
        return out

    def config(self):
        return {"sampler": self.name, "candidate_size": self.candidate_size}


class InverseDnsSampler(DnsSampler):
    """Keeps the lowest scoring of ``candidate_size`` uniform candidates."""
    name = "inverse_dns"
    largest = False


def _warp_draw(encoder, v, u_pos, margin, max_tries, rng, draw):
    cv = encoder.vectors(np.array([v]), CENTRAL, rng)[0]
    s_pos = float(encoder.vectors(np.array([u_pos]), CONTEXT, rng)[0] @ cv)
    for t in range(1, max_tries + 1):
        x = draw()
        if float(encoder.vectors(np.array([x]), CONTEXT, rng)[0] @ cv) - s_pos + margin > 0:
            return x, t
    return None, max_tries


def warp_sample(encoder, v: int, u_pos: int, margin: float, max_tries: int, rng, candidates=None):
    """Uniform draws until one violates the margin; ``None`` after ``max_tries``."""
    if max_tries < 1:
        raise ValueError("max_tries must be at least 1")
    cands = np.arange(encoder.num_nodes) if candidates is None else np.asarray(candidates)
    cands = cands[cands != v]

    def draw():
        return int(cands[rng.integers(len(cands))])

    return _warp_draw(encoder, v, u_pos, margin, max_tries, rng, draw)[0]


class WarpSampler(NegativeSampler):
    name = "warp"

    def __init__(self, graph, margin: float = 0.1, max_tries: int = 100, exclude_neighbors=False):
        super().__init__(graph, exclude_neighbors)
        if max_tries < 1:
            raise ValueError("max_tries must be at least 1")
        self.margin = margin
        self.max_tries = max_tries
        self.tries: list[int] = []

    def sample(self, v, u_pos, k, encoder, rng):
        out = []
        for _ in range(k):
            x, t = _warp_draw(encoder, v, u_pos, self.margin, self.max_tries, rng, lambda: self._uniform(v, rng))
            self.tries.append(t)
            if x is None:
                self.stats["failures"] += 1
            else:
                out.append(x)
        self.stats["draws"] += len(out)
        return np.array(out, dtype=np.int64)

    def config(self):
        return {"sampler": self.name, "margin": self.margin, "max_tries": self.max_tries}


class ProposalDistribution:
    """``q(y|x)``: half uniform over candidates, half uniform over ``local(x)``.

    ``local(x)`` holds up to ``k_local`` candidates near ``x``: one-hop
    neighbors, or on bipartite graphs the items two hops away through a
    shared user.  When ``local(x)`` is empty the proposal is fully uniform.
    """

    def __init__(self, graph: Graph, candidates=None, k_local: int = 10, seed=None, mix_uniform: float = 0.5):
        self.candidates = candidate_nodes(graph) if candidates is None else np.asarray(candidates)
        self.n = len(self.candidates)
        self.k_local = k_local
        self.mix_uniform = mix_uniform
        rng = np.random.default_rng(seed)
        self.local: dict[int, list[int]] = {}
        self._local_sets: dict[int, frozenset] = {}
        is_cand = np.zeros(graph.num_nodes, dtype=bool)
        is_cand[self.candidates] = True
        for x in self.candidates.tolist():
            if graph.is_bipartite:
                near = self._two_hop(graph, x, rng)
            else:
                nb = graph.adj(x)
                nb = nb[is_cand[nb]]
                near = (rng.choice(nb, size=k_local, replace=False) if len(nb) > k_local else nb).tolist()
            self.local[x] = [int(y) for y in near]
            self._local_sets[x] = frozenset(self.local[x])
        self._cands_list = self.candidates.tolist()

    def _two_hop(self, g, x, rng):
        if g.degrees[x] == 0 or self.k_local == 0:
            return []
        found: list[int] = []
        seen = {x}
        for _ in range(4 * self.k_local):
            mid = g.indices[g.indptr[x] + rng.integers(g.degrees[x])]
            y = int(g.indices[g.indptr[mid] + rng.integers(g.degrees[mid])])
            if y not in seen:
                seen.add(y)
                found.append(y)
                if len(found) == self.k_local:
                    break
        return found

    def prob(self, x: int, y: int) -> float:
        loc = self.local.get(x, ())
        if not loc:
            return 1.0 / self.n
        p = self.mix_uniform / self.n
        if y in self._local_sets[x]:
            p += (1.0 - self.mix_uniform) / len(loc)
        return p

    def propose(self, x: int, rng) -> int:
        loc = self.local.get(x, ())
        if loc and rng.random() >= self.mix_uniform:
            return loc[int(rng.random() * len(loc))]
        return self._cands_list[int(rng.random() * self.n)]


def proposal_prob(q: ProposalDistribution, x: int, y: int, N: int | None = None) -> float:
    if N is not None and N != q.n:
        raise ValueError(f"proposal was built over {q.n} candidates, not {N}")
    return q.prob(x, y)


@dataclass
class McnsChain:
    current: int
    alpha: float = 0.75
    epsilon: float = 1e-4
    accept_count: int = 0
    step_count: int = 0
    excluded: set = field(default_factory=set)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def accept_rate(self) -> float:
        return self.accept_count / self.step_count if self.step_count else 0.0


def target_weight(s: float, alpha: float, epsilon: float) -> float:
    """Unnormalized self-contrast target ``max(score, eps) ** alpha``."""
    return max(s, epsilon) ** alpha


def mcns_step(chain: McnsChain, encoder, v: int, q: ProposalDistribution, rng, central_vec=None) -> int:
    """One Metropolis-Hastings move targeting ``max(score(v, .), eps) ** alpha``.

    Returns the chain state after the move, whether or not it moved.  Nodes
    in ``chain.excluded`` (normally ``v``) have zero target weight.
    """
    x = chain.current
    y = q.propose(x, rng)
    cv = encoder.vectors(np.array([v]), CENTRAL)[0] if central_vec is None else central_vec
    sx, sy = encoder.vectors(np.array([x, y]), CONTEXT) @ cv
    wx = 0.0 if x in chain.excluded else target_weight(sx, chain.alpha, chain.epsilon)
    wy = 0.0 if y in chain.excluded else target_weight(sy, chain.alpha, chain.epsilon)
    chain.step_count += 1
    if wy == 0.0:
        return x
    if wx == 0.0:
        accept = True
    else:
        ratio = (wy / wx) * (q.prob(y, x) / q.prob(x, y))
        accept = ratio >= 1.0 or rng.random() < ratio
    if accept:
        chain.current = y
        chain.accept_count += 1
    return chain.current


class McnsSampler(NegativeSampler):
    """Metropolis-Hastings negatives from the clamped power of the model's own scores.

    One chain is kept across consecutive central nodes; it is re-initialized
    at random and warmed up for ``warmup`` steps at the start of every pass.
    Each emitted negative is the chain state after ``steps_per_sample``
    moves (1 emits after every move).
    """
    name = "mcns"

    def __init__(self, graph, alpha: float = 0.75, epsilon: float = 1e-4, k_local: int = 10,
                 warmup: int = 20, seed=None, exclude_neighbors=False, steps_per_sample: int = 1):
        super().__init__(graph, exclude_neighbors)
        if steps_per_sample < 1:
            raise ValueError("steps_per_sample must be at least 1")
        self.steps_per_sample = steps_per_sample
        rng = np.random.default_rng(seed)
        self.q = ProposalDistribution(graph, self.candidates, k_local, seed=rng.integers(2**63))
        self.chain = McnsChain(int(self.candidates[rng.integers(len(self.candidates))]), alpha, epsilon)
        self.warmup = warmup
        self.k_local = k_local

    def _exclusions(self, v):
        ex = {v}
        if self.exclude_neighbors:
            ex.update(self.graph.adj(v).tolist())
        return ex

    def begin_pass(self, v, encoder, rng):
        self.chain.current = int(self.candidates[rng.integers(len(self.candidates))])
        self.chain.excluded = self._exclusions(v)
        cv = encoder.vectors(np.array([v]), CENTRAL, rng)[0]
        for _ in range(self.warmup):
            mcns_step(self.chain, encoder, v, self.q, rng, cv)

    def sample(self, v, u_pos, k, encoder, rng):
        self.chain.excluded = self._exclusions(v)
        cv = encoder.vectors(np.array([v]), CENTRAL, rng)[0]
        out = np.empty(k, dtype=np.int64)
        for i in range(k):
            for _ in range(self.steps_per_sample):
                x = mcns_step(self.chain, encoder, v, self.q, rng, cv)
            # only possible when the carried-over state is v and every proposal was v as well
            while x in self.chain.excluded:
                x = mcns_step(self.chain, encoder, v, self.q, rng, cv)
            out[i] = x
        self.stats["draws"] += k
        return out

    def config(self):
        return {"sampler": self.name, "alpha": self.chain.alpha, "epsilon": self.chain.epsilon,
                "k_local": self.k_local, "warmup": self.warmup, "steps_per_sample": self.steps_per_sample}


def chain_schedule(graph: Graph, seed=None):
    """Central nodes in DFS order (``U`` side only on bipartite graphs).

    The traversal starts from a seeded random non-isolated central node.
    """
    rng = np.random.default_rng(seed)
    cents = central_nodes(graph)
    live = cents[graph.degrees[cents] > 0]
    start = int(live[rng.integers(len(live))]) if len(live) else int(cents[0])
    seq = dfs_sequence(graph, start, seed=rng.integers(2**63))
    if graph.is_bipartite:
        part = graph.partition
        return iter([v for v in seq if part[v] == 0])
    return iter(seq)


def make_negative_sampler(name: str, graph: Graph, *, beta=0.75, alpha=0.75, epsilon=1e-4, k_local=10,
                          warmup=20, dns_candidates=5, warp_max_tries=100, margin=0.1, seed=None,
                          exclude_neighbors=False, steps_per_sample=1) -> NegativeSampler:
    if name == "uniform":
        return UniformSampler(graph, exclude_neighbors)
    if name == "degree_power":
        return DegreePowerSampler(graph, beta, exclude_neighbors)
    if name == "dns":
        return DnsSampler(graph, dns_candidates, exclude_neighbors)
    if name == "inverse_dns":
        return InverseDnsSampler(graph, dns_candidates, exclude_neighbors)
    if name == "warp":
        return WarpSampler(graph, margin, warp_max_tries, exclude_neighbors)
    if name == "mcns":
        return McnsSampler(graph, alpha, epsilon, k_local, warmup, seed, exclude_neighbors, steps_per_sample)
    raise ValueError(f"unknown sampler {name!r}; choose from {', '.join(SAMPLERS)}")
