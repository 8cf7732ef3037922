import numpy as np
import pytest

from enzkg import experts, training
from enzkg.experts import (ExpertId, ExpertOutput, FusionWeights,
                           NoExpertFiredError, fuse, kb_expert, kge_expert,
                           load_logit_table, ml_expert, route)
from conftest import kg_from_tsv, random_kg


class TestKbExpert:
    def test_single_match_counts_one(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1;c2\te1\tc3\nc4\te2\tc5\n")
        out = kb_expert(kg.compounds.id_of("c1"), kg)
        assert out.coverage
        assert out.logits == {kg.enzymes.id_of("e1"): 1.0}

    def test_absent_substrate_no_coverage(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\nc9\t?\tc8\n")
        out = kb_expert(kg.compounds.id_of("c9"), kg)
        assert not out.coverage and out.logits == {}

    def test_three_equations_counted_by_hand(self, tmp_path):
        # c1 appears in three complete equations: e1, e1, e2 -> {e1: 2, e2: 1}
        kg = kg_from_tsv(tmp_path,
                         "c1;c2\te1\tc3\nc4\te1\tc1\nc1\te2\tc5\nc6\te3\tc7\n")
        out = kb_expert(kg.compounds.id_of("c1"), kg)
        assert out.logits == {kg.enzymes.id_of("e1"): 2.0,
                              kg.enzymes.id_of("e2"): 1.0}

    def test_substrate_on_product_side_counts(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\n")
        assert kb_expert(kg.compounds.id_of("c2"), kg).coverage


class _ScorerStub:
    """Per-pair distance table standing in for a trained model."""

    def __init__(self, kg, distances):
        self.kg = kg
        self.distances = distances
        self.higher_is_better = False

    def pair_vectors(self, triple, rng):
        return np.array(self.kg.edge_pair(triple), dtype=float), np.zeros(1)

    def enzyme_scores(self, s_vec, p_vec):
        return np.array(self.distances[int(s_vec[0]), int(s_vec[1])], dtype=float)


class TestKgeExpert:
    def test_no_match_no_coverage(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\nc8\t?\tc9\n")
        model = _ScorerStub(kg, {})
        out = kge_expert(kg.compounds.id_of("c1") + 99, kg, model)
        assert not out.coverage

    def test_single_equation_negated_distances(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\nc3\te2\tc4\n")
        key = kg.edge_pair(kg.complete[0])
        model = _ScorerStub(kg, {key: [0.2, 1.5]})
        out = kge_expert(kg.compounds.id_of("c1"), kg, model)
        assert out.logits == {0: -0.2, 1: -1.5}

    def test_two_equations_aggregated_by_max(self, tmp_path):
        # c2 sits in both equations; logit(e) = max over equations of -distance
        kg = kg_from_tsv(tmp_path, "c1;c2\te1\tc3\nc2\te2\tc4\n")
        k1 = kg.edge_pair(kg.complete[0])
        k2 = kg.edge_pair(kg.complete[1])
        d1 = [0.5, 2.0]
        d2 = [1.0, 0.3]
        model = _ScorerStub(kg, {k1: d1, k2: d2})
        out = kge_expert(kg.compounds.id_of("c2"), kg, model)
        want = {e: max(-d1[e], -d2[e]) for e in range(2)}
        assert out.logits == want

    def test_incomplete_equations_participate(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\nc7\t?\tc8\n")
        key = kg.edge_pair(kg.incomplete[0])
        model = _ScorerStub(kg, {key: [0.9]})
        out = kge_expert(kg.compounds.id_of("c7"), kg, model)
        assert out.coverage and out.logits == {0: -0.9}

    def test_requires_model(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\n")
        with pytest.raises(ValueError, match="trained model"):
            kge_expert(0, kg, None)


class TestMlExpert:
    def _table(self, tmp_path, text):
        kg = kg_from_tsv(tmp_path, "c1\te1\tc2\n")
        path = tmp_path / "ml.tsv"
        path.write_text(text)
        return kg, load_logit_table(path, kg.enzymes)

    def test_verbatim_logits(self, tmp_path):
        kg, table = self._table(tmp_path, "s1\te1\t0.25\ns1\te9\t-1.5\ns2\te1\t3.0\n")
        out = ml_expert("s1", table)
        assert out.coverage
        assert out.logits[kg.enzymes.id_of("e1")] == 0.25
        assert out.logits[kg.enzymes.id_of("e9")] == -1.5
        assert len(out.logits) == 2

    def test_absent_substrate(self, tmp_path):
        kg, table = self._table(tmp_path, "s1\te1\t0.25\n")
        out = ml_expert("nowhere", table)
        assert not out.coverage and out.logits == {}

    def test_duplicate_rows_last_wins_with_warning(self, tmp_path, caplog):
        with caplog.at_level("WARNING"):
            kg, table = self._table(tmp_path, "s1\te1\t0.25\ns1\te1\t0.75\n")
        assert table.duplicates == 1
        assert "duplicate" in caplog.text
        assert ml_expert("s1", table).logits[kg.enzymes.id_of("e1")] == 0.75

    def test_malformed_rows_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="3 columns"):
            self._table(tmp_path, "s1\te1\n")
        with pytest.raises(ValueError, match="not a number"):
            self._table(tmp_path, "s1\te1\tmuch\n")

    def test_header_row_tolerated(self, tmp_path):
        kg, table = self._table(tmp_path, "substrate\tenzyme\tlogit\ns1\te1\t1.0\n")
        assert ml_expert("s1", table).coverage


class TestRoute:
    def _kg(self, tmp_path):
        # c1 only complete; c7 only incomplete; c2 both; c9 neither
        return kg_from_tsv(tmp_path, "c1;c2\te1\tc3\nc2;c7\t?\tc8\nc9x\te2\tc9y\n")

    def test_four_scenarios(self, tmp_path):
        kg = self._kg(tmp_path)
        cid = kg.compounds.id_of
        assert route(cid("c2"), kg) == (ExpertId.KB, ExpertId.KGE, ExpertId.ML)
        assert route(cid("c7"), kg) == (ExpertId.KGE, ExpertId.ML)
        assert route(cid("c1"), kg) == (ExpertId.KB, ExpertId.ML)
        assert route(10_000, kg) == (ExpertId.ML,)

    def test_brute_force_membership(self, tmp_path):
        kg = random_kg(tmp_path, np.random.default_rng(12), n_complete=40,
                       n_incomplete=20)
        for substrate in range(len(kg.compounds) + 3):
            in_q = any(substrate in t.educts or substrate in t.products
                       for t in kg.complete)
            in_qp = any(substrate in t.educts or substrate in t.products
                        for t in kg.incomplete)
            want = {(True, True): (ExpertId.KB, ExpertId.KGE, ExpertId.ML),
                    (False, True): (ExpertId.KGE, ExpertId.ML),
                    (True, False): (ExpertId.KB, ExpertId.ML),
                    (False, False): (ExpertId.ML,)}[(in_q, in_qp)]
            assert route(substrate, kg) == want


class TestFuse:
    def test_single_expert_preserves_its_ordering(self):
        logits = {0: 3.0, 1: -1.0, 2: 7.5, 3: 0.0}
        out = fuse([ExpertOutput(ExpertId.KB, logits, True)],
                   FusionWeights(kb=0.05, kge=0.9, ml=0.05), k=4)
        assert [e for e, _ in out.ranked] == [2, 0, 3, 1]

    def test_constant_logits_fall_to_neutral_zero(self):
        flat = ExpertOutput(ExpertId.KB, {0: 2.0, 1: 2.0, 2: 2.0}, True)
        informative = ExpertOutput(ExpertId.ML, {0: 0.0, 1: 5.0, 2: 1.0}, True)
        out = fuse([flat, informative], FusionWeights(kb=0.9, kge=0.0, ml=0.1), k=3)
        assert all(z == 0.0 for z in out.zscores[ExpertId.KB].values())
        assert [e for e, _ in out.ranked] == [1, 2, 0]

    def test_hand_computed_two_expert_fixture(self):
        # weights (0.7, 0.3) over two active experts; three enzymes
        za = {0: 1.0, 1: 2.0, 2: 6.0}
        zb = {0: 4.0, 1: 1.0}
        out = fuse([ExpertOutput(ExpertId.KB, za, True),
                    ExpertOutput(ExpertId.ML, zb, True)],
                   FusionWeights(kb=0.7, kge=0.0, ml=0.3), k=3)
        a = np.array([1.0, 2.0, 6.0])
        b = np.array([4.0, 1.0])
        za_hat = (a - a.mean()) / a.std()
        zb_hat = (b - b.mean()) / b.std()
        fused = {0: 0.7 * za_hat[0] + 0.3 * zb_hat[0],
                 1: 0.7 * za_hat[1] + 0.3 * zb_hat[1],
                 2: 0.7 * za_hat[2] + 0.3 * 0.0}
        exp = np.exp(np.array([fused[e] for e in (0, 1, 2)]))
        probs = exp / exp.sum()
        got = dict(out.ranked)
        for e in (0, 1, 2):
            assert abs(got[e] - probs[e]) < 1e-9

    def test_affine_invariance_per_expert(self, rng):
        base = {i: float(rng.normal()) for i in range(6)}
        other = {i: float(rng.normal()) for i in range(4)}
        w = FusionWeights(kb=0.6, kge=0.0, ml=0.4)
        ref = fuse([ExpertOutput(ExpertId.KB, base, True),
                    ExpertOutput(ExpertId.ML, other, True)], w, k=6)
        for a, b in ((2.0, 0.0), (0.5, 3.0), (7.0, -4.0)):
            scaled = {e: a * v + b for e, v in base.items()}
            out = fuse([ExpertOutput(ExpertId.KB, scaled, True),
                        ExpertOutput(ExpertId.ML, other, True)], w, k=6)
            assert [e for e, _ in out.ranked] == [e for e, _ in ref.ranked]
            for (e1, p1), (e2, p2) in zip(out.ranked, ref.ranked):
                assert abs(p1 - p2) < 1e-9

    def test_probabilities_sum_to_one(self, rng):
        outs = [ExpertOutput(ExpertId.KB, {i: float(rng.normal()) for i in range(5)}, True),
                ExpertOutput(ExpertId.ML, {i: float(rng.normal()) for i in range(3, 8)}, True)]
        result = fuse(outs, FusionWeights(), k=10)
        assert abs(sum(p for _, p in result.ranked) - 1.0) < 1e-12

    def test_ties_break_on_enzyme_id(self):
        logits = {4: 1.0, 1: 1.0, 3: 1.0}
        out = fuse([ExpertOutput(ExpertId.ML, logits, True)], FusionWeights(), k=3)
        assert [e for e, _ in out.ranked] == [1, 3, 4]

    def test_weights_renormalized_over_active(self):
        # an inactive third expert must not dilute the sum
        a = ExpertOutput(ExpertId.KB, {0: 1.0, 1: 2.0}, True)
        b = ExpertOutput(ExpertId.ML, {}, False)
        full = fuse([a], FusionWeights(kb=1.0, kge=0.0, ml=0.0), k=2)
        diluted = fuse([a, b], FusionWeights(kb=0.2, kge=0.0, ml=0.8), k=2)
        for (e1, p1), (e2, p2) in zip(full.ranked, diluted.ranked):
            assert e1 == e2 and abs(p1 - p2) < 1e-12

    def test_no_expert_fired(self):
        with pytest.raises(NoExpertFiredError):
            fuse([ExpertOutput(ExpertId.ML, {}, False)], FusionWeights())

    def test_output_invariants(self):
        with pytest.raises(ValueError, match="coverage"):
            ExpertOutput(ExpertId.KB, {}, True)
        with pytest.raises(ValueError, match="coverage"):
            ExpertOutput(ExpertId.KB, {1: 1.0}, False)
        with pytest.raises(ValueError, match="finite"):
            ExpertOutput(ExpertId.KB, {1: float("inf")}, True)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            FusionWeights(kb=-0.1)
        with pytest.raises(ValueError):
            FusionWeights(kb=0.0, kge=0.0, ml=0.0)


class TestEndToEndSubstrate:
    def test_predict_substrate_routes_and_fuses(self, tmp_path):
        kg = kg_from_tsv(tmp_path, "c1;c2\te1\tc3\nc2\te2\tc4\nc2;c5\t?\tc6\n")
        cfg = training.TrainConfig(dim=8, max_epochs=3, batch_size=8, eta1=3,
                                   eta2=3, dropout=0.0, n_negatives=2,
                                   corruption="relation", seed=0)
        model = training.build_model(kg, kg.complete, cfg)
        path = tmp_path / "ml.tsv"
        path.write_text("c2\te1\t0.4\nc2\te2\t0.6\n")
        table = load_logit_table(path, kg.enzymes)
        res = experts.predict_substrate("c2", kg, model, table,
                                        FusionWeights(), k=5)
        assert res.ranked and abs(sum(p for _, p in res.ranked) - 1.0) < 1e-9
        assert set(res.zscores) == {ExpertId.KB, ExpertId.KGE, ExpertId.ML}
