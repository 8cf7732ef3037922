import numpy as np
import pytest

from enzkg import evaluation, scoring, training
from enzkg.kg import SplitSpec, split
from conftest import TOY_TSV, kg_from_tsv, random_kg


def toy_config(**kw):
    base = dict(dim=16, n_layers=1, learning_rate=5e-3, batch_size=8,
                max_epochs=200, eta1=5, eta2=5, dropout=0.0, l2_weight=1e-4,
                margin=4.0, n_negatives=4, corruption="entity", seed=3)
    base.update(kw)
    return training.TrainConfig(**base)


class TestTrainLoop:
    def test_toy_loss_trajectory(self, toy_kg):
        model = training.build_model(toy_kg, toy_kg.complete, toy_config())
        res = training.fit(model, toy_kg.complete)
        losses = np.array(res.losses)
        assert losses[-1] < 0.1 * losses[0]
        window = 25
        smoothed = np.convolve(losses, np.ones(window) / window, mode="valid")
        drops = np.diff(smoothed)
        assert smoothed[-1] < smoothed[0]
        assert (drops < 1e-3).mean() > 0.95  # monotone after smoothing

    def test_zero_learning_rate_is_a_null_update(self, tmp_path):
        # two enzymes + relation corruption makes negatives deterministic,
        # and over-budget sampling caps keep sub-sampling deterministic too
        kg = kg_from_tsv(tmp_path, TOY_TSV)
        cfg = toy_config(learning_rate=0.0, max_epochs=5, corruption="relation",
                         n_negatives=3, batch_size=16, eta1=50, eta2=50)
        model = training.build_model(kg, kg.complete, cfg)
        before = {k: t.data.copy() for k, t in model.named_tensors().items()}
        res = training.fit(model, kg.complete)
        for k, t in model.named_tensors().items():
            np.testing.assert_array_equal(t.data, before[k])
        assert len(set(np.round(res.losses, 15))) == 1

    def test_identical_seed_identical_trajectory(self, toy_kg):
        cfg = toy_config(max_epochs=30)
        r1 = training.fit(training.build_model(toy_kg, toy_kg.complete, cfg),
                          toy_kg.complete)
        r2 = training.fit(training.build_model(toy_kg, toy_kg.complete, cfg),
                          toy_kg.complete)
        assert r1.losses == r2.losses

    def test_divergence_aborts_with_diagnostic(self, toy_kg):
        cfg = toy_config(max_epochs=50)
        model = training.build_model(toy_kg, toy_kg.complete, cfg)
        model.encoder_params.features.data[0, 0] = np.nan
        with np.errstate(invalid="ignore"):
            with pytest.raises(training.TrainingDivergedError, match="batch"):
                training.fit(model, toy_kg.complete)

    def test_early_stopping_returns_best_validation_params(self, tmp_path):
        kg = random_kg(tmp_path, np.random.default_rng(4), n_complete=40,
                       n_incomplete=10)
        train_t, valid_t, test_t = split(kg, SplitSpec(seed=2))
        cfg = toy_config(max_epochs=40, eval_every=5, patience=2,
                         corruption="relation", n_negatives=8, batch_size=32,
                         learning_rate=2e-3)
        model = training.build_model(kg, train_t, cfg)
        res = training.fit(model, train_t, valid_t,
                           filter_triples=[train_t, valid_t, test_t])
        filt = evaluation.build_filter_set(kg, [train_t, valid_t, test_t])
        final = evaluation.evaluate(model, valid_t, filt, seed=cfg.seed)
        assert abs(final.mrr - res.best_val_mrr) < 1e-12
        assert all(mrr <= res.best_val_mrr + 1e-12 for _, mrr in res.val_mrr)


class TestMlpDecoder:
    def _separable_kg(self, tmp_path):
        # e1 reacts only among {c1..c3}, e2 only among {c4..c6}
        rows = ["c1\te1\tc2", "c2\te1\tc3", "c1;c2\te1\tc3",
                "c4\te2\tc5", "c5\te2\tc6", "c4;c5\te2\tc6"]
        return kg_from_tsv(tmp_path, "\n".join(rows) + "\n")

    def test_reaches_full_train_accuracy(self, tmp_path):
        kg = self._separable_kg(tmp_path)
        cfg = toy_config(decoder="mlp", max_epochs=150, learning_rate=5e-3,
                         l2_weight=0.0)
        model = training.build_model(kg, kg.complete, cfg)
        training.fit(model, kg.complete)
        rng = np.random.default_rng(0)
        hits = 0
        for t in kg.complete:
            s, p = model.pair_vectors(t, rng)
            hits += int(np.argmax(model.enzyme_scores(s, p)) == t.enzyme)
        assert hits == len(kg.complete)

    def test_untrained_logits_deterministic_and_shaped(self, tmp_path):
        kg = self._separable_kg(tmp_path)
        cfg = toy_config(decoder="mlp", max_epochs=1)
        a = training.build_model(kg, kg.complete, cfg)
        b = training.build_model(kg, kg.complete, cfg)
        rng1, rng2 = np.random.default_rng(1), np.random.default_rng(1)
        sa, pa = a.pair_vectors(kg.complete[0], rng1)
        sb, pb = b.pair_vectors(kg.complete[0], rng2)
        la, lb = a.enzyme_scores(sa, pa), b.enzyme_scores(sb, pb)
        np.testing.assert_array_equal(la, lb)
        assert la.shape == (len(kg.enzymes),)

    def test_higher_is_better_flag(self, tmp_path):
        kg = self._separable_kg(tmp_path)
        assert training.build_model(kg, kg.complete,
                                    toy_config(decoder="mlp")).higher_is_better
        assert not training.build_model(kg, kg.complete,
                                        toy_config()).higher_is_better


class TestMeanPoolDegeneracy:
    def test_meanpool_transe_equals_direct_baseline(self, tmp_path):
        kg = random_kg(tmp_path, np.random.default_rng(7), n_complete=20,
                       n_incomplete=5)
        cfg = toy_config(encoder_kind="meanpool", decoder="transe",
                         max_epochs=3, batch_size=8, learning_rate=1e-3)
        model = training.build_model(kg, kg.complete, cfg)
        training.fit(model, kg.complete)
        # the degenerate system must score exactly like a hand-coded
        # set-mean translation model sharing the same parameter arrays
        feats = model.encoder_params.features.data
        vecs = model.relations.vec.data
        rng = np.random.default_rng(0)
        for t in kg.complete[:10]:
            s_edge, p_edge = kg.edge_pair(t)
            s_mean = feats[list(kg.universe.members(s_edge))].mean(axis=0)
            p_mean = feats[list(kg.universe.members(p_edge))].mean(axis=0)
            want = np.abs(s_mean + vecs[t.enzyme] - p_mean).sum()
            s_vec, p_vec = model.pair_vectors(t, rng)
            got = model.enzyme_scores(s_vec, p_vec)[t.enzyme]
            assert abs(got - want) < 1e-12


class TestCheckpoint:
    def _trained(self, tmp_path):
        kg = kg_from_tsv(tmp_path, TOY_TSV)
        cfg = toy_config(max_epochs=20)
        model = training.build_model(kg, kg.complete, cfg)
        training.fit(model, kg.complete)
        return kg, model

    def test_round_trip_scores_identical(self, tmp_path):
        kg, model = self._trained(tmp_path)
        path = tmp_path / "ckpt.npz"
        training.save_checkpoint(path, model, epoch=20, best_val_mrr=0.5)
        ckpt = training.load_checkpoint(path)
        restored = training.restore_model(ckpt, kg, kg.complete)
        assert ckpt.epoch == 20 and ckpt.best_val_mrr == 0.5
        rng = np.random.default_rng(1)
        rng2 = np.random.default_rng(1)
        for t in kg.complete:
            s1, p1 = model.pair_vectors(t, rng)
            s2, p2 = restored.pair_vectors(t, rng2)
            a = model.enzyme_scores(s1, p1)
            b = restored.enzyme_scores(s2, p2)
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_random_pair_scores_round_trip(self, tmp_path):
        kg, model = self._trained(tmp_path)
        path = tmp_path / "ckpt.npz"
        training.save_checkpoint(path, model)
        restored = training.restore_model(training.load_checkpoint(path), kg,
                                          kg.complete)
        rng = np.random.default_rng(9)
        for _ in range(100):
            s, p = rng.normal(size=(2, model.config.dim))
            np.testing.assert_allclose(model.enzyme_scores(s, p),
                                       restored.enzyme_scores(s, p),
                                       rtol=0, atol=1e-12)

    def test_truncated_file_is_corrupt(self, tmp_path):
        kg, model = self._trained(tmp_path)
        path = tmp_path / "ckpt.npz"
        training.save_checkpoint(path, model)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(training.CheckpointCorruptError):
            training.load_checkpoint(path)

    def test_version_mismatch_names_both_versions(self, tmp_path, monkeypatch):
        kg, model = self._trained(tmp_path)
        path = tmp_path / "ckpt.npz"
        monkeypatch.setattr(training, "CHECKPOINT_VERSION", 99)
        training.save_checkpoint(path, model)
        monkeypatch.setattr(training, "CHECKPOINT_VERSION", 1)
        with pytest.raises(training.CheckpointVersionError, match="99.*1"):
            training.load_checkpoint(path)

    def test_mismatched_corpus_rejected(self, tmp_path):
        kg, model = self._trained(tmp_path)
        path = tmp_path / "ckpt.npz"
        training.save_checkpoint(path, model)
        other = kg_from_tsv(tmp_path, "cX\teY\tcZ\n", name="other.tsv")
        with pytest.raises(training.CheckpointCorruptError, match="intern"):
            training.restore_model(training.load_checkpoint(path), other,
                                   other.complete)


class TestConfig:
    def test_round_trip_dict(self):
        cfg = toy_config(decoder="transe", homogeneous=True)
        assert training.TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            training.TrainConfig.from_dict({"learning_rat": 0.1})

    def test_invalid_choices_rejected(self):
        with pytest.raises(ValueError):
            training.TrainConfig(decoder="rotate")
        with pytest.raises(ValueError):
            training.TrainConfig(encoder_kind="gcn")
