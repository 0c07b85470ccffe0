import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from papi import pll_data as data
from papi.errors import DimensionError, IntegrityError, ParseError


class TestBlobs:
    def test_minimal(self):
        ds = data.make_blobs(2, 1, 3, 1.0, seed=0)
        assert len(ds) == 2
        assert sorted(ds.true_labels.tolist()) == [0, 1]
        assert ds.is_fully_labeled

    def test_deterministic(self):
        a = data.make_blobs(3, 20, 5, 2.0, seed=9)
        b = data.make_blobs(3, 20, 5, 2.0, seed=9)
        assert a == b
        assert data.make_blobs(3, 20, 5, 2.0, seed=10) != a

    def test_linear_probe_separable(self, blobs4):
        # least-squares one-vs-rest probe; reference value 1.0 on seed 0
        x = np.hstack([blobs4.features, np.ones((len(blobs4), 1))])
        w, *_ = np.linalg.lstsq(x, np.eye(4)[blobs4.true_labels], rcond=None)
        assert np.mean((x @ w).argmax(axis=1) == blobs4.true_labels) >= 0.99

    def test_class_means_more_classes_than_dims(self):
        dirs = data.class_directions(6, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
        np.testing.assert_array_equal(dirs, data.class_directions(6, 3))

    @pytest.mark.parametrize("args", [(1, 5, 2, 1.0), (3, 0, 2, 1.0), (3, 5, 2, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            data.make_blobs(*args, seed=0)

    def test_examples_view(self):
        ds = data.make_blobs(2, 2, 3, 1.0, seed=0)
        ex = ds.examples[3]
        assert ex.true_label == 1 and ex.candidates == frozenset({1})

    def test_immutable(self):
        ds = data.make_blobs(2, 2, 3, 1.0, seed=0)
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0


class TestUniformCandidates:
    def test_q0_singletons(self, blobs4):
        ds = data.uniform_candidates(blobs4, 0.0, seed=1)
        assert (ds.candidate_mask.sum(axis=1) == 1).all()
        assert ds.candidate_mask[np.arange(len(ds)), ds.true_labels].all()

    def test_q1_full(self, blobs4):
        assert data.uniform_candidates(blobs4, 1.0, seed=1).candidate_mask.all()

    def test_mean_size_binomial(self):
        clean = data.make_blobs(10, 1000, 4, 1.0, seed=2)
        ds = data.uniform_candidates(clean, 0.3, seed=3)
        sizes = ds.candidate_mask.sum(axis=1)
        se = np.sqrt(9 * 0.3 * 0.7 / len(ds))
        assert abs(sizes.mean() - 3.7) < 3 * se

    def test_per_label_inclusion_rate(self):
        clean = data.make_blobs(10, 1000, 4, 1.0, seed=2)
        q = 0.3
        ds = data.uniform_candidates(clean, q, seed=4)
        for j in range(10):
            wrong = ds.true_labels != j
            rate = ds.candidate_mask[wrong, j].mean()
            assert abs(rate - q) < 3 * np.sqrt(q * (1 - q) / wrong.sum())

    def test_q_out_of_range(self, blobs4):
        with pytest.raises(ValueError):
            data.uniform_candidates(blobs4, 1.5, seed=0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0, 1), st.integers(0, 2**32))
    def test_true_label_always_candidate(self, q, seed):
        clean = data.make_blobs(5, 4, 2, 1.0, seed=1)
        ds = data.uniform_candidates(clean, q, seed)
        assert ds.candidate_mask[np.arange(len(ds)), ds.true_labels].all()
        assert ds == data.uniform_candidates(clean, q, seed)


def _flip_oracle(labels, scores):
    """Brute-force per-example flip probabilities (independent of the vectorised path)."""
    out = np.zeros_like(scores)
    for i, y in enumerate(labels):
        top = max(scores[i, k] for k in range(scores.shape[1]) if k != y)
        for j in range(scores.shape[1]):
            out[i, j] = 1.0 if j == y else scores[i, j] / top
    return out


class TestInstanceDependent:
    def test_top_incorrect_always_included(self):
        clean = data.make_blobs(5, 200, 3, 1.0, seed=0)
        scores = np.random.default_rng(1).random((len(clean), 5))
        ds = data.instance_dependent_candidates(clean, scores, seed=2)
        masked = scores.copy()
        masked[np.arange(len(ds)), ds.true_labels] = -1
        assert ds.candidate_mask[np.arange(len(ds)), masked.argmax(axis=1)].all()
        assert ds.candidate_mask[np.arange(len(ds)), ds.true_labels].all()

    def test_uniform_scores_give_full_sets(self):
        clean = data.make_blobs(4, 10, 3, 1.0, seed=0)
        ds = data.instance_dependent_candidates(clean, np.full((len(clean), 4), 0.25), seed=0)
        assert ds.candidate_mask.all()

    def test_flip_frequency_monte_carlo(self):
        clean = data.make_blobs(4, 2500, 2, 1.0, seed=0)
        scores = np.random.default_rng(7).random((len(clean), 4))
        probs = _flip_oracle(clean.true_labels, scores)
        np.testing.assert_allclose(data.flip_probabilities(clean.true_labels, scores), probs, rtol=1e-15)
        ds = data.instance_dependent_candidates(clean, scores, seed=8)
        for j in range(4):
            wrong = clean.true_labels != j
            pj = probs[wrong, j]
            se = np.sqrt((pj * (1 - pj)).sum()) / wrong.sum()
            assert abs(ds.candidate_mask[wrong, j].mean() - pj.mean()) <= 3 * se + 1e-12

    def test_degenerate_scores(self):
        clean = data.make_blobs(3, 2, 2, 1.0, seed=0)
        scores = np.zeros((len(clean), 3))
        scores[np.arange(len(clean)), clean.true_labels] = 1.0
        with pytest.raises(ValueError, match="incorrect-label scores are zero"):
            data.instance_dependent_candidates(clean, scores, seed=0)


class TestPretrainOracle:
    def test_rows_are_distributions(self):
        clean = data.make_blobs(3, 30, 4, 3.0, seed=1)
        scores = data.pretrain_oracle(clean, 2, seed=0)
        assert scores.shape == (90, 3)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-6)

    def test_untrained_symmetric_inputs_uniform(self):
        # zero inputs and zero biases: every logit is 0
        ds = data.PLLDataset(np.zeros((6, 3)), np.array([0, 1, 2, 0, 1, 2]), np.eye(3, dtype=bool)[[0, 1, 2, 0, 1, 2]], 3)
        np.testing.assert_allclose(data.pretrain_oracle(ds, 0, seed=0), 1 / 3, atol=1e-12)

    def test_trained_accuracy(self, blobs4):
        scores = data.pretrain_oracle(blobs4, 50, seed=0)
        # reference value 1.0 (seed 0)
        assert np.mean(scores.argmax(axis=1) == blobs4.true_labels) >= 0.95

    def test_requires_clean_labels(self, tiny_partial):
        with pytest.raises(IntegrityError):
            data.pretrain_oracle(tiny_partial, 1, seed=0)


class TestAugment:
    spec0 = data.AugmentationSpec(0.0, 0.0, 0.0)

    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((4, 3))
        np.testing.assert_array_equal(data.augment(x, "weak", self.spec0, 1), x)
        np.testing.assert_array_equal(data.augment(x, "strong", self.spec0, 1), x)

    @pytest.mark.parametrize("mode", ["weak", "strong"])
    def test_shape(self, mode):
        x = np.ones((5, 7))
        assert data.augment(x, mode, data.AugmentationSpec(), 3).shape == (5, 7)

    def test_full_dropout(self):
        spec = data.AugmentationSpec(0.1, 0.5, 1.0)
        assert not data.augment(np.ones((3, 3)), "strong", spec, 0).any()

    def test_deterministic_and_weak_smaller(self):
        x = np.zeros((200, 10))
        spec = data.AugmentationSpec(0.1, 0.5, 0.0)
        np.testing.assert_array_equal(data.augment(x, "weak", spec, 4), data.augment(x, "weak", spec, 4))
        assert data.augment(x, "weak", spec, 4).std() < data.augment(x, "strong", spec, 4).std()

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            data.AugmentationSpec(strong_dropout_rate=1.5)
        with pytest.raises(ValueError):
            data.AugmentationSpec(weak_noise_sigma=-1.0)
        with pytest.raises(ValueError):
            data.AugmentationSpec(composition="3xS")

    def test_view_modes(self):
        assert data.AugmentationSpec(composition="S+W").view_modes() == ("weak", "strong")
        assert data.AugmentationSpec(composition="2xS").view_modes() == ("strong", "strong")
        assert data.AugmentationSpec(composition="2xW").view_modes() == ("weak", "weak")


class TestMixup:
    x = np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 5.0]])

    def test_phi_one(self):
        mb = data.mixup_batch(self.x, 1.0, 0, mix_coeff=1.0)
        np.testing.assert_array_equal(mb.mixed_features, self.x)

    def test_phi_zero(self):
        mb = data.mixup_batch(self.x, 1.0, 0, mix_coeff=0.0)
        np.testing.assert_array_equal(mb.mixed_features, self.x[mb.partner_index])

    def test_midpoint(self):
        # search a seed whose permutation swaps the two rows
        for seed in range(50):
            mb = data.mixup_batch(self.x[:2], 1.0, seed, mix_coeff=0.5)
            if mb.partner_index.tolist() == [1, 0]:
                np.testing.assert_array_equal(mb.mixed_features[0], [1.0, 1.0])
                return
        pytest.fail("no swapping permutation found")

    def test_batch_too_small(self):
        with pytest.raises(DimensionError):
            data.mixup_batch(self.x[:1], 1.0, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32), st.floats(0.1, 10))
    def test_convex_combination(self, seed, alpha):
        x = np.random.default_rng(seed).standard_normal((6, 3))
        mb = data.mixup_batch(x, alpha, seed)
        assert sorted(mb.partner_index.tolist()) == list(range(6))
        assert 0.0 <= mb.mix_coeff <= 1.0
        lo = np.minimum(x, x[mb.partner_index]) - 1e-12
        hi = np.maximum(x, x[mb.partner_index]) + 1e-12
        assert ((mb.mixed_features >= lo) & (mb.mixed_features <= hi)).all()


class TestCsv:
    def test_round_trip(self, tmp_path, tiny_partial):
        path = tmp_path / "d.csv"
        data.save_dataset(tiny_partial, path)
        assert data.load_dataset(path) == tiny_partial

    def test_format(self, tmp_path):
        ds = data.PLLDataset([[0.5, -1.0]], [1], [[True, True, False, True]], 4)
        path = tmp_path / "d.csv"
        data.save_dataset(ds, path)
        assert path.read_bytes() == b"f0,f1,true_label,candidates\n0.5,-1.0,1,0;1;3\n"

    def test_missing_true_label(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,true_label,candidates\n1.0,2,0;1\n")
        with pytest.raises(IntegrityError, match="line 2"):
            data.load_dataset(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            data.load_dataset(path)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,true_label,candidates\n1.0,0,0\nabc,0,0\n")
        with pytest.raises(ParseError) as info:
            data.load_dataset(path)
        assert info.value.line == 3

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,true_label,candidates\n1.0,0\n")
        with pytest.raises(ParseError, match="line 2"):
            data.load_dataset(path)
