import numpy as np
import pytest

from enzkg.hypergraph import (OutOfVocabularyError, SharingEdgeType,
                              UnknownHyperedgeError, build, dump_typed_edges,
                              edge_type_for_roles)
from enzkg.kg import Role
from conftest import kg_from_tsv, random_kg

E, P, X = (SharingEdgeType.EDUCT_SHARING, SharingEdgeType.PRODUCT_SHARING,
           SharingEdgeType.CROSS_SHARING)


def brute_force_edges(kg):
    """Oracle: double loop over universe hyperedges with set intersections."""
    uni = kg.universe
    out = set()
    for i in range(len(uni)):
        for j in range(len(uni)):
            if i == j:
                continue
            if set(uni.members(i)) & set(uni.members(j)):
                out.add((i, j, edge_type_for_roles(uni.role_of(i), uni.role_of(j))))
    return out


class TestBuild:
    def test_toy_graph_has_exactly_three_undirected_typed_edges(self, toy_kg):
        g = build(toy_kg)
        got = set(g.typed_edges())
        expected = {(0, 2, E), (2, 0, E),      # educt sharing via c2
                    (1, 3, P), (3, 1, P),      # product sharing via c4
                    (2, 1, X), (1, 2, X)}      # cross sharing via c3
        assert got == expected

    def test_toy_incidence_membership(self, toy_kg):
        g = build(toy_kg)
        c4 = toy_kg.compounds.id_of("c4")
        # product {c4} has exactly one member; c4 sits in hyperedges 1 and 3
        assert g.incidence_column(3) == (c4,)
        assert g.incidence_row(c4) == (1, 3)

    def test_disjoint_equations_give_empty_adjacency(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\nc3\te2\tc4\n")
        assert build(kg).typed_edges() == []

    def test_oracle_equivalence_on_random_fixtures(self, tmp_path):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            kg = random_kg(tmp_path, rng, n_complete=40, n_incomplete=15,
                           name=f"r{seed}.tsv")
            g = build(kg)
            assert set(g.typed_edges()) == brute_force_edges(kg)

    def test_type_symmetry(self, tmp_path, rng):
        kg = random_kg(tmp_path, rng, n_complete=40)
        g = build(kg)
        edges = set(g.typed_edges())
        for i, j, t in edges:
            assert (j, i, t) in edges  # all three relations are undirected

    def test_no_self_loops(self, tmp_path, rng):
        kg = random_kg(tmp_path, rng)
        for i, j, _ in build(kg).typed_edges():
            assert i != j

    def test_incomplete_equations_enter_the_graph(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1;c2\te1\tc3\nc2;c9\t?\tc8\n")
        g = build(kg)
        s_blank, _ = kg.edge_pair(kg.incomplete[0])
        assert s_blank in g
        assert any({i, j} == {0, s_blank} for i, j, _ in g.typed_edges())

    def test_exclude_incomplete(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1;c2\te1\tc3\nc2;c9\t?\tc8\n")
        g = build(kg, include_incomplete=False)
        s_blank, _ = kg.edge_pair(kg.incomplete[0])
        assert s_blank not in g

    def test_dump_format(self, toy_kg, tmp_path):
        out = tmp_path / "edges.tsv"
        n = dump_typed_edges(build(toy_kg), out)
        lines = out.read_text().strip().splitlines()
        assert n == len(lines) == 6
        assert lines[0].split("\t") == ["0", "2", "EDUCT_SHARING"]


class TestSampling:
    def test_take_all_when_under_budget(self, toy_kg, rng):
        g = build(toy_kg)
        sub = g.sample_neighborhood(0, eta1=5, eta2=5, rng=rng)
        assert [(e.hyperedge, e.edge_type) for e in sub.entries] == [(2, E)]
        assert sub.target_compounds == toy_kg.universe.members(0)

    def test_isolated_hyperedge_has_no_neighbors(self, tmp_path, rng):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\nc3\te2\tc4\n")
        g = build(kg)
        sub = g.sample_neighborhood(0, eta1=3, eta2=3, rng=rng)
        assert sub.entries == ()
        assert sub.target_compounds == kg.universe.members(0)

    def test_same_seed_same_subgraph(self, tmp_path):
        kg = random_kg(tmp_path, np.random.default_rng(5), n_complete=40)
        g = build(kg)
        a = g.sample_neighborhood(2, 2, 2, np.random.default_rng(9))
        b = g.sample_neighborhood(2, 2, 2, np.random.default_rng(9))
        assert a == b

    def test_budget_respected(self, tmp_path):
        kg = random_kg(tmp_path, np.random.default_rng(6), n_complete=60)
        g = build(kg)
        for target in g.hyperedges():
            sub = g.sample_neighborhood(target, 3, 2, np.random.default_rng(1))
            assert len({e.hyperedge for e in sub.entries}) <= 3
            assert len(sub.target_compounds) <= 2
            assert all(len(e.compounds) <= 2 for e in sub.entries)

    def test_unknown_target_raises(self, toy_kg, rng):
        with pytest.raises(UnknownHyperedgeError):
            build(toy_kg).sample_neighborhood(99, 2, 2, rng)

    def test_bad_budgets_raise(self, toy_kg, rng):
        with pytest.raises(ValueError):
            build(toy_kg).sample_neighborhood(0, 0, 2, rng)


class TestAttach:
    def test_attach_c2_c4_as_educt_links_all_four_hyperedges(self, toy_kg):
        g = build(toy_kg)
        ids = [toy_kg.compounds.id_of(c) for c in ("c2", "c4")]
        sub = g.attach_query_hyperedge(ids, Role.EDUCT)
        got = {(e.hyperedge, e.edge_type) for e in sub.entries}
        assert got == {(0, E), (2, E),    # educt sharing via c2
                       (1, X), (3, X)}    # cross sharing via c4

    def test_existing_set_reproduces_built_neighborhood(self, tmp_path):
        kg = random_kg(tmp_path, np.random.default_rng(3), n_complete=40)
        g = build(kg)
        for edge in g.hyperedges()[:12]:
            sub = g.attach_query_hyperedge(g.members(edge), g.role(edge))
            got = {(e.hyperedge, e.edge_type) for e in sub.entries}
            expected = {(j, t) for j, ts in g.neighbors(edge).items() for t in ts}
            assert got == expected

    def test_unknown_compounds_dropped_with_warning(self, toy_kg, caplog):
        g = build(toy_kg)
        c2 = toy_kg.compounds.id_of("c2")
        with caplog.at_level("WARNING"):
            sub = g.attach_query_hyperedge([c2, 999], Role.EDUCT)
        assert "dropped" in caplog.text
        assert sub.target_compounds == (c2,)

    def test_all_unknown_is_out_of_vocabulary(self, toy_kg):
        g = build(toy_kg)
        with pytest.raises(OutOfVocabularyError, match="out-of-vocabulary"):
            g.attach_query_hyperedge([999], Role.EDUCT)

    def test_attach_does_not_mutate_graph(self, toy_kg):
        g = build(toy_kg)
        before = set(g.typed_edges())
        g.attach_query_hyperedge([toy_kg.compounds.id_of("c2")], Role.PRODUCT)
        assert set(g.typed_edges()) == before
        assert len(g.hyperedges()) == 4
