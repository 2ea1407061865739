import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gqe import kgraph
from gqe.errors import ParseError, SchemaError

from oracles import random_graph


def test_inverse_relations_are_materialized(toy_graph):
    g = toy_graph
    treats = g.relation_id("treats")
    inv = g.relation_id("treats__inv")
    assert inv == g.inverse(treats) == treats ^ 1
    x2 = g.node_id("x2")
    assert g.neighbors(x2, inv) == (g.node_id("d1"), g.node_id("d2"))
    assert g.relations[inv].domain_type == g.type_id("disease")


def test_neighbors_of_isolated_node_is_empty(toy_graph):
    g = toy_graph
    p1 = g.node_id("p1")
    assert g.neighbors(p1, g.relation_id("targets__inv")) == (g.node_id("d1"),)
    d2 = g.node_id("d2")
    assert g.neighbors(d2, g.relation_id("targets")) == ()


def test_neighbors_type_mismatch(toy_graph):
    g = toy_graph
    with pytest.raises(SchemaError):
        g.neighbors(g.node_id("p1"), g.relation_id("treats"))


def test_nodes_of_type(toy_graph):
    g = toy_graph
    assert [g.node_names[v] for v in g.nodes_of_type(g.type_id("drug"))] == ["d1", "d2"]
    with pytest.raises(ValueError):
        g.nodes_of_type(17)


def test_duplicate_edges_deduplicated(toy_files):
    (toy_files / "edges.tsv").write_text("d1\ttreats\tx1\nd1\ttreats\tx1\n")
    g = kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv")
    assert g.num_edges() == 1


def test_malformed_line_reports_line_number(toy_files):
    (toy_files / "edges.tsv").write_text("d1\ttreats\tx1\nd1 treats x2\n")
    with pytest.raises(ParseError, match="line 2"):
        kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv")


def test_undeclared_node_is_parse_error(toy_files):
    (toy_files / "edges.tsv").write_text("d1\ttreats\tx9\n")
    with pytest.raises(ParseError, match="x9"):
        kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv")


def test_schema_violation_names_edge(toy_files):
    (toy_files / "edges.tsv").write_text("d1\ttreats\tx1\nd1\ttreats\tp1\n")
    with pytest.raises(SchemaError, match=r"\(d1, treats, p1\)"):
        kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv")


def test_reserved_inverse_suffix_rejected(toy_files):
    (toy_files / "edges.tsv").write_text("x1\ttreats__inv\td1\n")
    with pytest.raises(ParseError):
        kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv")


def test_min_relation_edges_drops_rare_relations(toy_files):
    g = kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv", min_relation_edges=2)
    assert [r.name for r in g.forward_relations] == ["treats"]


def test_features_file(toy_files):
    (toy_files / "feats.tsv").write_text("d1\t0 3\nd2\t1\n")
    g = kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv", toy_files / "feats.tsv")
    drug = g.type_id("drug")
    assert g.types[drug].feature_dim == 4
    assert g.features(g.node_id("d1")) == (0, 3)
    assert not g.is_one_hot(drug)
    assert g.is_one_hot(g.type_id("disease"))


def test_serialize_round_trip(tmp_path, toy_files):
    (toy_files / "feats.tsv").write_text("d1\t0 3\nd2\t1\n")
    g = kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv", toy_files / "feats.tsv")
    assert kgraph.write_graph(g, tmp_path / "out")
    h = kgraph.read_graph(tmp_path / "out")
    assert h.serialize() == g.serialize()
    assert not kgraph.write_graph(h, tmp_path / "out")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_graph_round_trip(tmp_path_factory, seed):
    g = random_graph(np.random.default_rng(seed), num_nodes=15, num_types=2, num_relations=3, density=0.1)
    d = tmp_path_factory.mktemp("g")
    kgraph.write_graph(g, d)
    h = kgraph.read_graph(d)
    assert h.edges(include_inverse=True) == g.edges(include_inverse=True)
    assert h.node_names == g.node_names


def test_split_removes_inverse_together():
    g = kgraph.synthetic_blocks(2, 20, 0.5, 3, 2, seed=0)
    split = kgraph.split_edges(g, 0.1, seed=3)
    deleted = split.deleted_edges
    k = round(0.1 * g.num_edges())
    assert len(deleted) == 2 * k
    train = split.train_graph
    for u, r, v in deleted:
        assert (v, r ^ 1, u) in deleted
        assert not train.has_edge(u, r, v)
    assert train.num_edges() == g.num_edges() - k


def test_split_rejects_bad_fraction():
    g = kgraph.synthetic_blocks(1, 4, 1.0, 1, 1, seed=0)
    for f in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            kgraph.split_edges(g, f, 0)
    with pytest.raises(ValueError):
        kgraph.split_edges(g, 0.01, 0)


def test_synthetic_blocks_edges_stay_within_blocks():
    g = kgraph.synthetic_blocks(3, 30, 1.0, 4, 3, seed=5)
    # with density 1 each relation is a disjoint union of complete bipartite blocks
    for rel in g.forward_relations:
        adj = g.adjacency(rel.id)
        groups = {tuple(vs) for vs in adj.values()}
        flat = [v for grp in groups for v in grp]
        assert len(flat) == len(set(flat))
        assert len(groups) == 3


def test_parse_synthetic():
    g = kgraph.parse_synthetic("blocks:3,10,0.5", seed=1)
    assert g.num_nodes == 30 and len(g.types) == 3 and len(g.forward_relations) == 4
    with pytest.raises(ValueError):
        kgraph.parse_synthetic("grid:3,3")
    with pytest.raises(ValueError):
        kgraph.parse_synthetic("blocks:3,x,0.5")
