"""Benchmark tests: task construction, corruptions, metrics, splits, sweeps."""

import math

import numpy as np
import pytest

from geodin.bench import (
    KIND_SCALES,
    SEVERITY_LADDER,
    ConceptGroup,
    ShiftSpec,
    adjacent_drops,
    auroc,
    concept_split,
    corrupt,
    make_concept_groups,
    make_task,
    sweep,
    tnr_at_tpr95,
)
from geodin.errors import ConfigError, DomainError, MissingTokenError, StateError
from geodin.train import TrainConfig, init_model, train


class TestMakeTask:
    def test_zero_noise_samples_equal_prototype(self):
        task = make_task(3, 8, 10, 0.0, seed=0)
        X, y = task.train
        for c in range(3):
            np.testing.assert_array_equal(X[y == c], np.tile(task.prototypes[c], (X[y == c].shape[0], 1)))

    def test_same_seed_identical(self):
        a = make_task(4, 6, 20, 0.3, seed=5)
        b = make_task(4, 6, 20, 0.3, seed=5)
        assert a.train[0].tobytes() == b.train[0].tobytes()
        assert a.test[0].tobytes() == b.test[0].tobytes()

    def test_prototypes_unit_norm(self):
        task = make_task(5, 12, 10, 0.1, seed=1)
        np.testing.assert_allclose(np.linalg.norm(task.prototypes, axis=1), 1.0, atol=1e-12)

    def test_split_sizes(self):
        task = make_task(3, 4, 50, 0.1, seed=2)
        assert task.train[0].shape[0] == 3 * 30
        assert task.val[0].shape[0] == 3 * 10
        assert task.test[0].shape[0] == 3 * 10

    def test_too_few_classes(self):
        with pytest.raises(ConfigError):
            make_task(1, 4, 50, 0.1, seed=0)

    def test_prototype_angles_match_random_unit_expectation(self):
        # Monte Carlo oracle: random unit vectors in high dimension are
        # near-orthogonal in expectation, sd of pairwise cos is ~1/sqrt(d).
        task = make_task(40, 400, 5, 0.0, seed=3)
        P = task.prototypes
        cosines = (P @ P.T)[np.triu_indices(40, k=1)]
        assert abs(cosines.mean()) < 3.0 / math.sqrt(400)
        assert abs(cosines.std() - 1.0 / math.sqrt(400)) < 0.02


class TestCorrupt:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.X = rng.uniform(0.5, 1.5, (2000, 16))
        self.y = rng.integers(0, 4, 2000)

    @pytest.mark.parametrize("kind", ["gaussian_noise", "uniform_noise", "feature_dropout", "smoothing"])
    def test_perturbation_grows_with_severity(self, kind):
        sizes = []
        for s in range(1, 6):
            Xc, _ = corrupt((self.X, self.y), ShiftSpec(kind, s), seed=0)
            sizes.append(np.linalg.norm(Xc - self.X, axis=1).mean())
        assert all(a < b for a, b in zip(sizes, sizes[1:]))

    def test_labels_pass_through(self):
        _, y = corrupt((self.X, self.y), ShiftSpec("gaussian_noise", 1), seed=0)
        assert y is self.y

    def test_deterministic(self):
        a, _ = corrupt((self.X, self.y), ShiftSpec("uniform_noise", 3), seed=4)
        b, _ = corrupt((self.X, self.y), ShiftSpec("uniform_noise", 3), seed=4)
        assert a.tobytes() == b.tobytes()
        c, _ = corrupt((self.X, self.y), ShiftSpec("uniform_noise", 3), seed=5)
        assert a.tobytes() != c.tobytes()

    def test_gaussian_chi_moment(self):
        # E||delta||_2 ~= sigma * sqrt(d) for gaussian noise (chi mean).
        rng = np.random.default_rng(8)
        X = rng.uniform(0.5, 1.5, (10_000, 16))
        spec = ShiftSpec("gaussian_noise", 4)
        sigma = SEVERITY_LADDER[3] * KIND_SCALES["gaussian_noise"]
        Xc, _ = corrupt((X, None), spec, seed=1)
        measured = np.linalg.norm(Xc - X, axis=1).mean()
        assert abs(measured - sigma * math.sqrt(16)) / (sigma * math.sqrt(16)) < 0.05

    def test_dropout_mask_rate(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(0.5, 1.5, (10_000, 16))
        Xc, _ = corrupt((X, None), ShiftSpec("feature_dropout", 5), seed=2)
        rate = np.mean(Xc == 0.0)
        assert abs(rate - 0.5) < 0.01

    def test_smoothing_deterministic_no_rng(self):
        Xc1, _ = corrupt((self.X, self.y), ShiftSpec("smoothing", 2), seed=0)
        Xc2, _ = corrupt((self.X, self.y), ShiftSpec("smoothing", 2), seed=99)
        assert Xc1.tobytes() == Xc2.tobytes()  # smoothing draws no noise

    def test_concept_kind_rejected(self):
        with pytest.raises(DomainError):
            corrupt((self.X, self.y), ShiftSpec("concept_split", 1), seed=0)

    def test_severity_zero_rejected(self):
        with pytest.raises(DomainError):
            corrupt((self.X, self.y), ShiftSpec("gaussian_noise", 0), seed=0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            ShiftSpec("salt_and_pepper", 1)


class TestConceptGroups:
    def test_similarity_ladder_monotone(self):
        task = make_task(8, 16, 40, 0.15, seed=11)
        groups = make_concept_groups(task, 5, 2, 30)
        sims = [g.similarity for g in groups]
        assert all(a <= b for a, b in zip(sims, sims[1:]))
        assert all(isinstance(g, ConceptGroup) for g in groups)

    def test_targets_achieved(self):
        task = make_task(8, 16, 40, 0.15, seed=12)
        targets = (0.75, 0.85, 0.92)
        groups = make_concept_groups(task, 3, 3, 20, targets)
        for g, t in zip(groups, targets):
            assert abs(g.similarity - t) < 0.02

    def test_targets_below_floor_clamp_at_centroid(self):
        task = make_task(8, 16, 40, 0.15, seed=12)
        blend = task.prototypes.sum(axis=0)
        blend /= np.linalg.norm(blend)
        floor = float((task.prototypes @ blend).max())
        groups = make_concept_groups(task, 2, 2, 10, (0.1, 0.2))
        for g in groups:
            assert g.similarity == pytest.approx(floor, abs=1e-9)

    def test_shapes_and_determinism(self):
        task = make_task(6, 12, 40, 0.15, seed=13)
        a = make_concept_groups(task, 4, 2, 25)
        b = make_concept_groups(task, 4, 2, 25)
        for ga, gb in zip(a, b):
            assert ga.X.shape == (50, 12)
            assert ga.X.tobytes() == gb.X.tobytes()

    def test_decreasing_similarities_rejected(self):
        task = make_task(4, 8, 40, 0.15, seed=14)
        with pytest.raises(ConfigError):
            make_concept_groups(task, 2, 2, 10, (0.9, 0.5))


class TestConceptSplit:
    def embeddings(self):
        return {
            "cat": np.array([1.0, 0.0]),
            "near": np.array([0.9, 0.1]),
            "mid": np.array([0.5, 0.2]),
            "far": np.array([0.1, 0.3]),
            "pickup": np.array([0.7, 0.0]),
        }

    def test_hand_sorted_groups(self):
        groups = concept_split(["cat"], ["near", "mid", "far"], self.embeddings(), 3)
        assert [g.names for g in groups] == [("far",), ("mid",), ("near",)]
        assert groups[0].mean == pytest.approx(0.1)
        assert groups[2].mean == pytest.approx(0.9)

    def test_equal_similarities_lexicographic(self):
        emb = {"id": np.array([1.0]), "b": np.array([0.5]), "a": np.array([0.5]), "c": np.array([0.5])}
        groups = concept_split(["id"], ["b", "a", "c"], emb, 3)
        assert [g.names for g in groups] == [("a",), ("b",), ("c",)]

    def test_remainder_goes_to_last_group(self):
        emb = {str(i): np.array([float(i)]) for i in range(8)}
        emb["id"] = np.array([1.0])
        groups = concept_split(["id"], [str(i) for i in range(7)], emb, 3)
        assert [len(g.names) for g in groups] == [2, 2, 3]
        assert groups[-1].names == ("4", "5", "6")

    def test_multiword_resolution(self):
        groups = concept_split(["cat"], ["pickup truck"], self.embeddings(), 1)
        assert groups[0].names == ("pickup truck",)
        assert groups[0].mean == pytest.approx(0.7)

    def test_missing_tokens_listed(self):
        with pytest.raises(MissingTokenError) as err:
            concept_split(["cat"], ["unicorn", "near", "dragon"], self.embeddings(), 1)
        assert err.value.tokens == ["dragon", "unicorn"]

    def test_partition_covers_all_classes(self):
        rng = np.random.default_rng(15)
        emb = {f"c{i}": rng.normal(0.0, 1.0, 4) for i in range(30)}
        emb["base"] = rng.normal(0.0, 1.0, 4)
        names = [f"c{i}" for i in range(30)]
        groups = concept_split(["base"], names, emb, 10)
        seen = [n for g in groups for n in g.names]
        assert sorted(seen) == sorted(names)
        assert len(seen) == len(set(seen))


def pairwise_auroc(id_s, ood_s):
    """O(n^2) Mann-Whitney oracle."""
    id_s = np.asarray(id_s)[:, None]
    ood_s = np.asarray(ood_s)[None, :]
    return float(np.mean((id_s > ood_s) + 0.5 * (id_s == ood_s)))


class TestAuroc:
    def test_fully_separated(self):
        assert auroc([2.0, 3.0], [0.0, 1.0]) == 1.0

    def test_identical_multisets(self):
        assert auroc([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.5

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(16)
        for _ in range(25):
            n1, n2 = rng.integers(10, 500, 2)
            id_s = rng.normal(1.0, 1.0, n1)
            ood_s = rng.normal(0.0, 1.0, n2)
            assert abs(auroc(id_s, ood_s) - pairwise_auroc(id_s, ood_s)) < 1e-9

    def test_matches_pairwise_oracle_at_size_2000(self):
        rng = np.random.default_rng(26)
        id_s = rng.normal(0.5, 1.0, 2000)
        ood_s = rng.normal(0.0, 1.0, 2000)
        assert abs(auroc(id_s, ood_s) - pairwise_auroc(id_s, ood_s)) < 1e-9

    def test_tied_integer_scores(self):
        rng = np.random.default_rng(17)
        id_s = rng.integers(0, 5, 300).astype(float)
        ood_s = rng.integers(0, 5, 200).astype(float)
        assert abs(auroc(id_s, ood_s) - pairwise_auroc(id_s, ood_s)) < 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(18)
        id_s = rng.normal(1.0, 1.0, 100)
        ood_s = rng.normal(0.0, 1.0, 80)
        a = auroc(id_s, ood_s)
        b = auroc(rng.permutation(id_s), rng.permutation(ood_s))
        assert a == b

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            auroc([], [1.0])


class TestTnrAtTpr95:
    def test_fully_separated(self):
        assert tnr_at_tpr95(np.arange(100) + 10.0, np.arange(50) - 100.0) == 1.0

    def test_hand_case(self):
        id_s = np.arange(1.0, 21.0)  # 1..20
        ood_s = np.array([0.5, 1.5])
        # largest t with >=95% of ID >= t is the 2nd smallest ID score (2.0);
        # both OOD scores are < 2.0.
        assert tnr_at_tpr95(id_s, ood_s) == 1.0

    def test_same_distribution_rate(self):
        rng = np.random.default_rng(19)
        id_s = rng.normal(0.0, 1.0, 100_000)
        ood_s = rng.normal(0.0, 1.0, 100_000)
        assert abs(tnr_at_tpr95(id_s, ood_s) - 0.05) <= 0.01

    def test_permutation_invariance(self):
        rng = np.random.default_rng(20)
        id_s = rng.normal(0.0, 1.0, 500)
        ood_s = rng.normal(0.0, 1.0, 400)
        assert tnr_at_tpr95(id_s, ood_s) == tnr_at_tpr95(rng.permutation(id_s), rng.permutation(ood_s))

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            tnr_at_tpr95([1.0], [])


@pytest.fixture(scope="module")
def small_trained():
    task = make_task(4, 10, 100, 0.15, seed=31)
    model = train(TrainConfig(epochs=20, seed=31, hidden=(24,), feature_dim=8), task.train, n_classes=4)
    return task, model


class TestSweep:
    def test_control_row_near_half(self):
        # Enough control samples that the +-0.03 band is several sigma wide.
        task = make_task(4, 10, 1200, 0.15, seed=31, val_frac=0.1, test_frac=0.5)
        model = train(TrainConfig(epochs=10, seed=31, hidden=(24,), feature_dim=8), task.train, n_classes=4)
        report = sweep(model, task, ["g", "h", "u", "msp", "energy"], [ShiftSpec("none", 0)])
        for row in report.rows:
            assert abs(row.auroc - 0.5) <= 0.03
            assert abs(row.tnr_at_tpr95 - 0.05) <= 0.03

    def test_row_cardinality_and_order(self, small_trained):
        task, model = small_trained
        specs = [ShiftSpec("gaussian_noise", s) for s in range(1, 6)]
        report = sweep(model, task, ["g", "h"], specs)
        assert len(report.rows) == 10
        assert [r.severity for r in report.rows if r.score == "g"] == [1, 2, 3, 4, 5]
        assert all(r.n_id == task.test[0].shape[0] for r in report.rows)

    def test_concept_specs_need_groups(self, small_trained):
        task, model = small_trained
        with pytest.raises(ConfigError):
            sweep(model, task, ["g"], [ShiftSpec("concept_split", 0)])

    def test_untrained_model_rejected(self, small_trained):
        task, _ = small_trained
        fresh = init_model(TrainConfig(hidden=(24,), feature_dim=8, seed=0), d_in=10, n_classes=4)
        with pytest.raises(StateError):
            sweep(fresh, task, ["g"], [ShiftSpec("none", 0)])

    def test_unknown_score_rejected(self, small_trained):
        task, model = small_trained
        with pytest.raises(ConfigError):
            sweep(model, task, ["mahalanobis"], [ShiftSpec("none", 0)])

    def test_deterministic_and_parallel_equivalent(self, small_trained):
        task, model = small_trained
        specs = [ShiftSpec("gaussian_noise", s) for s in (1, 3, 5)] + [ShiftSpec("none", 0)]
        a = sweep(model, task, ["g", "u"], specs)
        b = sweep(model, task, ["g", "u"], specs)
        c = sweep(model, task, ["g", "u"], specs, jobs=3)
        assert a.rows == b.rows == c.rows

    def test_concept_group_rows(self, small_trained):
        task, model = small_trained
        groups = make_concept_groups(task, 3, 2, 40)
        report = sweep(model, task, ["h"], [ShiftSpec("concept_split", i) for i in range(3)], groups)
        assert [r.severity for r in report.rows] == [0, 1, 2]
        assert all(r.n_ood == 80 for r in report.rows)


class TestAdjacentDrops:
    def test_monotone_has_no_drops(self):
        assert np.all(adjacent_drops([0.1, 0.2, 0.3]) == 0.0)

    def test_drop_measured(self):
        drops = adjacent_drops([0.5, 0.4, 0.6])
        np.testing.assert_allclose(drops, [0.1, 0.0])
