# tests/test_scoring.py
import math

import numpy as np
import pytest

from recps.models import MatrixFactorization
from recps.schemas.training import TrainConfig
from recps.services.dataset import TRAIN
from recps.services.scoring import (
    build_score_table,
    exact_mean,
    global_threshold_batch,
    global_threshold_score,
    load_score_table,
    max_log_ratio,
    max_log_ratio_batch,
    save_score_table,
    score_interaction,
    score_query,
    score_user,
)
from recps.services.shadow import ShadowEnsemble
from recps.services.stats import OutDistribution
from recps.utils.exceptions import DegenerateMembershipError, EvaluationError, MissingInputError, VocabularyError


def brute_force_score(lambdas, labels):
    """Enumerate every OUT threshold t and keep the best ln(TPR/FPR) of the rule lambda > t."""
    lambdas = list(lambdas)
    labels = list(labels)
    ins = [x for x, bit in zip(lambdas, labels) if bit]
    outs = [x for x, bit in zip(lambdas, labels) if not bit]
    best = 0.0
    for t in outs:
        tpr = sum(x > t for x in ins) / len(ins)
        fpr = sum(x > t for x in outs) / len(outs)
        if fpr > 0 and tpr > 0:
            best = max(best, math.log(tpr / fpr))
    return best


def handmade_ensemble(ds, membership, seed=0):
    """Random mf-logit shadows with a fixed membership matrix over ds's training interactions."""
    rng = np.random.default_rng(seed)
    m = membership.shape[0]
    cfg = TrainConfig(dim=4, init_scale=1.0)
    models = [MatrixFactorization.initialise(ds.num_users, ds.num_items, cfg, rng) for _ in range(m)]
    return ShadowEnsemble(
        family="mf-logit",
        dataset=ds,
        membership=np.asarray(membership, dtype=bool),
        models=models,
        out_dist=OutDistribution(0.0, 2.0, 30),
        seed=seed,
        train_config=cfg,
    )


class TestMaxLogRatio:
    """The per-interaction kernel."""

    def test_worked_example(self):
        """t=0.6 has FPR 0 and is skipped; t=0.2 gives TPR 1, FPR 0.5."""
        assert max_log_ratio([0.9, 0.8, 0.6, 0.2], [1, 1, 0, 0]) == pytest.approx(math.log(2))

    def test_indistinguishable_models(self):
        assert max_log_ratio([0.4] * 6, [1, 0, 1, 0, 1, 0]) == 0.0

    def test_perfect_separation(self):
        """Three OUT models below three IN models give ln 3."""
        assert max_log_ratio([0.9, 0.8, 0.7, 0.3, 0.2, 0.1], [1, 1, 1, 0, 0, 0]) == pytest.approx(math.log(3))

    def test_never_negative(self):
        assert max_log_ratio([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0]) == 0.0

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            max_log_ratio([0.1, 0.2], [1, 1])

    def test_matches_brute_force(self):
        """1000 random instances, ties included, against direct enumeration."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            m = int(rng.integers(2, 13))
            labels = rng.integers(0, 2, size=m)
            if labels.all() or not labels.any():
                continue
            lambdas = np.round(rng.random(m), 1)
            expected = brute_force_score(lambdas, labels)
            assert max_log_ratio(lambdas, labels) == pytest.approx(expected, abs=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        lambdas = rng.random((9, 50))
        labels = rng.random((9, 50)) < 0.5
        labels[:, 0] = True
        labels[:, 1] = False

        scores = max_log_ratio_batch(lambdas, labels)

        assert np.isnan(scores[:2]).all()
        for c in range(2, 50):
            assert scores[c] == pytest.approx(brute_force_score(lambdas[:, c], labels[:, c]), abs=1e-12)

    def test_stronger_in_evidence_never_lowers_score(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            lambdas = rng.random(8)
            labels = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=bool)
            base = max_log_ratio(lambdas, labels)
            boosted = lambdas.copy()
            boosted[rng.integers(0, 4)] += rng.random()
            assert max_log_ratio(boosted, labels) >= base - 1e-12

    def test_global_threshold_score(self):
        """Rule lambda > 0.5: TPR 2/2, FPR 1/2."""
        assert global_threshold_score([0.9, 0.8, 0.6, 0.2], [1, 1, 0, 0]) == pytest.approx(math.log(2))
        assert global_threshold_score([0.4, 0.3, 0.2, 0.1], [1, 1, 0, 0]) == 0.0

    def test_global_threshold_batch_matches_single(self):
        rng = np.random.default_rng(11)
        lambdas = rng.random((8, 40))
        labels = rng.random((8, 40)) < 0.5
        labels[:, 0] = True

        scores = global_threshold_batch(lambdas, labels, 0.5)

        assert np.isnan(scores[0])
        for c in range(1, 40):
            if labels[:, c].any() and not labels[:, c].all():
                assert scores[c] == global_threshold_score(lambdas[:, c], labels[:, c], 0.5)

    def test_global_threshold_never_beats_best_threshold(self):
        """lambda > 0.5 is one rule; the OUT-threshold maximum dominates it."""
        rng = np.random.default_rng(12)
        lambdas = rng.random((10, 200))
        labels = np.zeros((10, 200), dtype=bool)
        labels[:5] = True

        assert (global_threshold_batch(lambdas, labels) <= max_log_ratio_batch(lambdas, labels) + 1e-12).all()


class TestUserScores:
    """Interaction scores through the ensemble and user means."""

    def test_exact_mean(self):
        assert exact_mean([0.6, 1.0, 1.4]) == pytest.approx(1.0)
        assert exact_mean([0.25]) == 0.25

    def test_exact_mean_matches_fsum(self):
        values = np.random.default_rng(1).random(10) * 1e6
        assert exact_mean(values) == math.fsum(values) / 10

    def test_exact_mean_empty(self):
        with pytest.raises(EvaluationError):
            exact_mean([])

    def test_score_interaction_non_negative(self, small_ensemble, small_dataset):
        scores = []
        for column in range(20):
            row = small_ensemble.positions[column]
            if 0 < small_ensemble.in_counts[column] < small_ensemble.m:
                scores.append(score_interaction(small_ensemble, (int(small_dataset.users[row]), int(small_dataset.items[row]))))
        assert scores
        assert min(scores) >= 0.0

    def test_score_user_is_mean_of_interactions(self, tiny_dataset):
        membership = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]], dtype=bool)
        ensemble = handmade_ensemble(tiny_dataset, membership)
        bob = tiny_dataset.user_index["bob"]
        items = [int(i) for i in tiny_dataset.user_items(bob, split=TRAIN)]

        expected = exact_mean(score_interaction(ensemble, (bob, item)) for item in items)

        assert score_user(ensemble, bob) == expected
        assert score_user(ensemble, bob, items[:1]) == score_interaction(ensemble, (bob, items[0]))

    def test_score_query_structure(self, tiny_dataset):
        membership = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]], dtype=bool)
        ensemble = handmade_ensemble(tiny_dataset, membership)
        bob = tiny_dataset.user_index["bob"]

        per_item, mean = score_query(ensemble, bob)

        assert sorted(per_item) == sorted(int(i) for i in tiny_dataset.user_items(bob, split=TRAIN))
        assert mean == pytest.approx(exact_mean(per_item.values()))
        for item, value in per_item.items():
            assert value == pytest.approx(score_interaction(ensemble, (bob, item)))

    def test_degenerate_membership(self, tiny_dataset):
        membership = np.array([[1, 0, 1], [1, 1, 0]], dtype=bool)
        ensemble = handmade_ensemble(tiny_dataset, membership)
        row = ensemble.positions[0]

        with pytest.raises(DegenerateMembershipError):
            score_interaction(ensemble, (int(tiny_dataset.users[row]), int(tiny_dataset.items[row])))

    def test_unknown_user(self, small_ensemble):
        with pytest.raises(VocabularyError):
            score_user(small_ensemble, 10_000)


class TestScoreTable:
    """The persisted table of interaction and user scores."""

    def test_full_table(self, small_ensemble, small_dataset):
        table = build_score_table(small_ensemble)

        assert len(table) + len(table.residual) == small_dataset.member_positions().size
        assert (table.interactions["score"] >= 0).all()
        assert table.users["n_interactions"].sum() == len(table)
        assert list(table.users["user"]) == [u for u in small_dataset.user_ids if u in set(table.users["user"])]

    def test_user_scores_are_exact_means(self, small_ensemble):
        table = build_score_table(small_ensemble)
        grouped = table.interactions.groupby("user")["score"]

        for user, score in table.user_scores.items():
            assert score == math.fsum(grouped.get_group(user)) / grouped.get_group(user).size

    def test_single_user_matches_full_table(self, small_ensemble, small_dataset):
        full = build_score_table(small_ensemble)
        user_key = small_dataset.user_ids[3]
        single = build_score_table(small_ensemble, [3])

        expected = full.interactions[full.interactions["user"] == user_key].reset_index(drop=True)
        assert single.interactions.equals(expected)
        assert single.user_scores[user_key] == full.user_scores[user_key]

    def test_residual_interactions(self, tiny_dataset):
        """All-IN interactions are listed, not scored."""
        membership = np.array([[1, 0, 1], [1, 1, 0]], dtype=bool)
        table = build_score_table(handmade_ensemble(tiny_dataset, membership))

        assert len(table.residual) == 1
        assert table.residual["in_count"].tolist() == [2]
        assert len(table) == 2

    def test_csv_round_trip(self, small_ensemble, tmp_path):
        """Scores survive save and load bit for bit."""
        table = build_score_table(small_ensemble)
        save_score_table(table, tmp_path / "scores")
        loaded = load_score_table(tmp_path / "scores")

        assert loaded.ensemble_ref == table.ensemble_ref
        assert loaded.interaction_scores == table.interaction_scores
        assert loaded.user_scores == table.user_scores
        assert (tmp_path / "scores" / "interactions.csv").read_text().startswith("# ensemble=")

    def test_missing_table(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_score_table(tmp_path)

    def test_unknown_user_subset(self, small_ensemble):
        with pytest.raises(VocabularyError):
            build_score_table(small_ensemble, [10_000])

    def test_global_threshold_column(self, small_ensemble, tmp_path):
        table = build_score_table(small_ensemble, global_threshold=0.5)
        save_score_table(table, tmp_path / "scores")
        header = (tmp_path / "scores" / "interactions.csv").read_text().splitlines()[1]

        assert header == "user,item,score,global_score"
        assert (table.interactions["global_score"] >= 0).all()
        assert (table.interactions["global_score"] <= table.interactions["score"] + 1e-12).all()
        assert table.user_scores == build_score_table(small_ensemble).user_scores
