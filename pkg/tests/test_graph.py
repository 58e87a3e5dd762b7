import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negsampling.graph import (
    DisconnectedGraphError,
    Graph,
    GraphFormatError,
    barabasi_albert,
    dfs_sequence,
    is_connected,
    load_edge_list,
    load_labels,
    path_graph,
    random_bipartite,
    random_walks,
    split_link_prediction,
    star_graph,
    to_bipartite_contrast,
    write_edge_list,
)


def adjacency(g):
    return {v: g.adj(v).tolist() for v in range(g.num_nodes)}


@st.composite
def graphs(draw, max_nodes=15):
    n = draw(st.integers(1, max_nodes))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=40))
    return Graph(n, pairs)


@st.composite
def trees(draw, max_nodes=20):
    n = draw(st.integers(1, max_nodes))
    parents = [draw(st.integers(0, i - 1)) for i in range(1, n)]
    return Graph(n, [(i, p) for i, p in zip(range(1, n), parents)])


# storage


@given(graphs())
def test_csr_invariants(g):
    for v in range(g.num_nodes):
        nb = g.adj(v)
        assert np.all(np.diff(nb) > 0)
        assert v not in nb
        assert g.degrees[v] == len(nb)
        for u in nb:
            assert g.has_edge(u, v)


def test_arrays_are_read_only():
    g = path_graph(3)
    with pytest.raises(ValueError):
        g.indices[0] = 2


def test_partition_must_be_respected():
    with pytest.raises(GraphFormatError):
        Graph(3, [(0, 1), (1, 2)], partition=[0, 1, 1])


def test_edge_out_of_range():
    with pytest.raises(ValueError):
        Graph(2, [(0, 2)])


# loading


def test_load_small_file(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("# comment\n0\t1\n1\t2\n")
    g = load_edge_list(p)
    assert g.num_nodes == 3
    assert adjacency(g) == {0: [1], 1: [0, 2], 2: [1]}
    assert g.node_ids == ["0", "1", "2"]


def test_duplicate_line_gives_identical_graph(tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    a.write_text("0 1\n1 2\n")
    b.write_text("0 1\n1 2\n0 1\n")
    assert load_edge_list(a).structurally_equal(load_edge_list(b))


def test_first_appearance_order_and_weights(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("x y 0.5\ny z 2\n")
    g = load_edge_list(p)
    assert g.node_ids == ["x", "y", "z"]
    assert g.num_edges == 2


def test_malformed_line_names_the_line(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("0 1\na b c d\n")
    with pytest.raises(GraphFormatError, match=":2:"):
        load_edge_list(p)


def test_bad_weight(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("0 1 heavy\n")
    with pytest.raises(GraphFormatError, match="weight"):
        load_edge_list(p)


def test_self_loops_counted(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("0 0\n0 1\n")
    g = load_edge_list(p)
    assert g.stats["self_loops"] == 1
    assert g.num_edges == 1


def test_partition_file(tmp_path):
    e, parts = tmp_path / "g.tsv", tmp_path / "p.tsv"
    e.write_text("u1 i1\nu2 i1\n")
    parts.write_text("u1 U\nu2 U\ni1 I\n")
    g = load_edge_list(e, partition_path=parts)
    assert g.nodes_in("U").tolist() == [0, 2]
    parts.write_text("u1 U\nu9 U\n")
    with pytest.raises(GraphFormatError, match="unknown node"):
        load_edge_list(e, partition_path=parts)


def test_directed_source_keeps_arcs(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("0 1\n2 1\n")
    g = load_edge_list(p, directed=True)
    assert g.directed_source
    assert g.arcs.tolist() == [[0, 1], [2, 1]]
    assert g.has_edge(1, 2)


def test_load_twice_structurally_equal(tmp_path):
    g = barabasi_albert(30, 2, seed=0)
    p = tmp_path / "g.tsv"
    write_edge_list(g, p)
    assert load_edge_list(p).structurally_equal(load_edge_list(p))


def test_write_then_load_roundtrip(tmp_path):
    g = random_bipartite(5, 7, 0.3, seed=1)
    e, parts = tmp_path / "g.tsv", tmp_path / "p.tsv"
    write_edge_list(g, e, parts)
    h = load_edge_list(e, partition_path=parts)
    assert h.num_edges == g.num_edges
    assert h.is_bipartite
    assert len(h.nodes_in("U")) == np.count_nonzero(g.degrees[g.nodes_in("U")])
    assert len(h.nodes_in("I")) == np.count_nonzero(g.degrees[g.nodes_in("I")])


def test_labels(tmp_path):
    p = tmp_path / "l.tsv"
    p.write_text("a\tx,y\nb\tz\n")
    assert load_labels(p, {"a": 0, "b": 1}) == {0: ["x", "y"], 1: ["z"]}
    with pytest.raises(GraphFormatError):
        load_labels(p, {"a": 0})


# dfs


def test_dfs_hand_traces():
    assert dfs_sequence(path_graph(3), 0) == [0, 1, 2, 1, 0]
    assert dfs_sequence(Graph(1, []), 0) == [0]
    assert dfs_sequence(star_graph(3), 0) == [0, 1, 0, 2, 0]


def test_dfs_restarts_lowest_unvisited():
    g = Graph(5, [(3, 4), (0, 1)])
    assert dfs_sequence(g, 3) == [3, 4, 3, 0, 1, 0, 2]


@given(trees(), st.integers(0, 2**31))
def test_dfs_tree_length_and_adjacency(g, seed):
    seq = dfs_sequence(g, 0, seed=seed)
    assert len(seq) == 2 * g.num_nodes - 1
    assert set(seq) == set(range(g.num_nodes))
    for a, b in zip(seq, seq[1:]):
        assert g.has_edge(a, b)


@given(graphs(), st.integers(0, 2**31))
def test_dfs_consecutive_adjacent_within_components(g, seed):
    seq = dfs_sequence(g, 0, seed=seed)
    assert set(seq) == set(range(g.num_nodes))
    first = {}
    for i, v in enumerate(seq):
        first.setdefault(v, i)
    for i, (a, b) in enumerate(zip(seq, seq[1:])):
        # a jump is allowed only when b is a restart root seen for the first time
        assert g.has_edge(a, b) or first[b] == i + 1


def test_dfs_seeded_is_deterministic():
    g = barabasi_albert(50, 3, seed=2)
    assert dfs_sequence(g, 0, seed=7) == dfs_sequence(g, 0, seed=7)


# walks


def test_single_edge_walk():
    walks = random_walks(Graph(2, [(0, 1)]), 1, 3, seed=0)
    assert sorted(map(tuple, walks)) == [(0, 1, 0), (1, 0, 1)]


def test_walks_deterministic_and_adjacent():
    g = barabasi_albert(40, 2, seed=3)
    w1 = random_walks(g, 2, 10, seed=5)
    assert w1 == random_walks(g, 2, 10, seed=5)
    assert len(w1) == 80
    for w in w1:
        assert all(g.has_edge(a, b) for a, b in zip(w, w[1:]))


def test_walk_length_must_be_at_least_two():
    with pytest.raises(ValueError):
        random_walks(path_graph(3), 1, 1)


def test_walks_skip_isolated_nodes():
    walks = random_walks(Graph(3, [(0, 1)]), 1, 4, seed=0)
    assert {w[0] for w in walks} == {0, 1}


def test_triangle_next_hop_is_uniform():
    g = Graph(3, [(0, 1), (1, 2), (0, 2)])
    w = np.array(random_walks(g, 1, 300_001, seed=11))
    seq = np.concatenate(w)
    nxt = np.concatenate([row[1:][row[:-1] == 0] for row in w])
    freq = np.bincount(nxt, minlength=3) / len(nxt)
    assert freq[0] == 0
    assert abs(freq[1] - 0.5) < 0.02 and abs(freq[2] - 0.5) < 0.02
    assert len(seq) > 100_000


# link-prediction split


def test_triangle_split_has_no_negatives():
    with pytest.raises(ValueError, match="non-edges"):
        split_link_prediction(Graph(3, [(0, 1), (1, 2), (0, 2)]), 1 / 3, seed=0)


def test_four_cycle_split():
    g = Graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    s = split_link_prediction(g, 0.25, seed=4)
    assert s.residual.num_edges == 3 and len(s.test_pos) == 1
    assert is_connected(s.residual)
    a, b = s.test_neg[0]
    assert not g.has_edge(a, b)


def test_split_errors():
    with pytest.raises(DisconnectedGraphError):
        split_link_prediction(Graph(4, [(0, 1), (2, 3)]), 0.3, seed=0)
    with pytest.raises(ValueError):
        split_link_prediction(path_graph(3), 0.1, seed=0)


def test_split_tree_reports_achieved_fraction():
    s = split_link_prediction(Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)]), 0.6, seed=0)
    assert s.achieved_fraction < s.requested_fraction
    assert len(s.test_pos) == 1


@pytest.mark.parametrize("seed", range(100))
def test_split_connectivity_over_seeds(seed):
    g = barabasi_albert(60, 2, seed=seed % 7)
    s = split_link_prediction(g, 0.3, seed=seed)
    assert is_connected(s.residual)
    assert s.achieved_fraction <= s.requested_fraction + 1e-9
    assert len(s.test_neg) == len(s.test_pos)
    for a, b in s.test_pos:
        assert not s.residual.has_edge(a, b) and g.has_edge(a, b)
    for a, b in s.test_neg:
        assert not g.has_edge(a, b) and a != b
    assert len({tuple(p) for p in s.test_neg.tolist()}) == len(s.test_neg)


def test_split_json_uses_original_ids(tmp_path):
    g = Graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)], node_ids=list("abcd"))
    s = split_link_prediction(g, 0.25, seed=1)
    s.to_json(tmp_path / "s.json")
    import json
    doc = json.loads((tmp_path / "s.json").read_text())
    assert all(x in "abcd" for pair in doc["test_pos"] + doc["test_neg"] for x in pair)


# bipartite contrast


def test_contrast_single_edge():
    h = to_bipartite_contrast(Graph(2, [(0, 1)]))
    assert h.num_nodes == 4
    assert sorted(map(tuple, h.edges().tolist())) == [(0, 3), (1, 2)]
    assert h.partition.tolist() == [0, 0, 1, 1]


def test_contrast_empty():
    h = to_bipartite_contrast(Graph(3, []))
    assert h.num_nodes == 6 and h.num_edges == 0


@given(graphs())
@settings(max_examples=50)
def test_contrast_pairs_equal_directed_edges(g):
    h = to_bipartite_contrast(g)
    n = g.num_nodes
    pairs = sorted((a, b - n) for a, b in h.edges().tolist())
    assert pairs == sorted(map(tuple, g.arcs.tolist()))
    assert h.num_edges == len(g.arcs)


def test_contrast_directed():
    g = Graph(3, [(0, 1), (1, 2)], directed=True)
    h = to_bipartite_contrast(g)
    assert sorted(map(tuple, h.edges().tolist())) == [(0, 4), (1, 5)]


# generators


def test_ba_connected_and_sized():
    g = barabasi_albert(100, 2, seed=1)
    assert g.num_nodes == 100 and is_connected(g)
    assert g.num_edges == 2 + 2 * (100 - 3)


def test_random_bipartite_users_have_items():
    g = random_bipartite(20, 5, 0.01, seed=0)
    assert np.all(g.degrees[:20] >= 1)
