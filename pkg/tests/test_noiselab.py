import numpy as np
import pytest

from lipbayes.noiselab import (
    FeatureDataset,
    cosine_distances,
    inject_random,
    inject_spce,
    make_blobs,
    make_confusable_blobs,
    round_half_up,
)
from lipbayes.numkit import RngStream


def blob_stream(seed=0):
    return RngStream(seed, purpose="noiselab-test")


class TestMakeBlobs:
    def test_zero_spread_collapses_classes_to_points(self):
        ds = make_blobs(20, 3, 4, spread=0.0, separation=2.0, stream=blob_stream())
        for c in range(4):
            pts = ds.features[ds.labels == c]
            assert np.ptp(pts, axis=0).max() == 0.0

    def test_small_spread_gives_perfect_nearest_neighbor(self):
        ds = make_blobs(300, 8, 3, spread=0.01, separation=5.0, stream=blob_stream(1))
        D = cosine_distances(ds.features)
        np.fill_diagonal(D, np.inf)
        nn = D.argmin(axis=1)
        assert (ds.labels[nn] == ds.labels).mean() == 1.0

    def test_exact_balance(self):
        ds = make_blobs(3000, 4, 6, spread=1.0, separation=1.0, stream=blob_stream(2))
        counts = np.bincount(ds.labels, minlength=6)
        np.testing.assert_array_equal(counts, np.full(6, 500))

    def test_near_balance_with_remainder(self):
        ds = make_blobs(10, 2, 3, spread=1.0, separation=1.0, stream=blob_stream(3))
        counts = np.bincount(ds.labels, minlength=3)
        assert counts.max() - counts.min() <= 1

    def test_confusable_pair_is_closest(self):
        ds = make_confusable_blobs(600, 16, 5, spread=1.0, stream=blob_stream(4))
        centers = np.array([ds.features[ds.labels == c].mean(axis=0) for c in range(5)])
        D = cosine_distances(centers)
        np.fill_diagonal(D, np.inf)
        assert np.unravel_index(D.argmin(), D.shape) in [(0, 1), (1, 0)]


class TestInjectRandom:
    def test_eta_zero_is_identity(self):
        ds = make_blobs(50, 2, 3, spread=1.0, separation=1.0, stream=blob_stream(5))
        corrupted, plan = inject_random(ds, 0.0, blob_stream(6))
        assert len(plan) == 0
        np.testing.assert_array_equal(corrupted.labels, ds.labels)

    def test_eta_one_binary_flips_everything(self):
        ds = make_blobs(40, 2, 2, spread=1.0, separation=1.0, stream=blob_stream(7))
        corrupted, plan = inject_random(ds, 1.0, blob_stream(8))
        assert len(plan) == 40
        np.testing.assert_array_equal(corrupted.labels, 1 - ds.labels)

    def test_plan_size_and_validity(self):
        ds = make_blobs(1000, 4, 5, spread=1.0, separation=1.0, stream=blob_stream(9))
        corrupted, plan = inject_random(ds, 0.15, blob_stream(10))
        assert len(plan) == 150
        assert all(e.corrupted != e.original for e in plan.entries)
        ids = plan.corrupted_ids()
        assert len(np.unique(ids)) == 150

    def test_undo_restores_original_labels(self):
        ds = make_blobs(200, 3, 4, spread=1.0, separation=1.0, stream=blob_stream(11))
        corrupted, plan = inject_random(ds, 0.3, blob_stream(12))
        restored = plan.undo(corrupted)
        np.testing.assert_array_equal(restored.labels, ds.labels)

    def test_wrong_class_choice_is_uniform(self):
        ds = make_blobs(400, 2, 4, spread=1.0, separation=1.0, stream=blob_stream(13))
        counts = np.zeros((4, 4))
        for seed in range(200):
            _, plan = inject_random(ds, 0.25, RngStream(seed, purpose="marginal"))
            for e in plan.entries:
                counts[e.original, e.corrupted] += 1
        # conditional on the original class, each wrong class carries 1/(C-1)
        for o in range(4):
            row_total = counts[o].sum()
            freq = counts[o] / row_total
            se = np.sqrt((1 / 3) * (2 / 3) / row_total)
            assert freq[o] == 0.0
            others = np.delete(freq, o)
            assert np.all(np.abs(others - 1 / 3) < 3 * se + 1e-9)

    def test_rounding_is_half_up(self):
        assert round_half_up(2.5) == 3
        assert round_half_up(2.49) == 2
        ds = make_blobs(10, 2, 2, spread=1.0, separation=1.0, stream=blob_stream(14))
        _, plan = inject_random(ds, 0.25, blob_stream(15))
        assert len(plan) == 3  # 2.5 rounds up


class TestInjectSpce:
    def test_eta_zero_is_identity(self):
        ds = make_blobs(50, 4, 3, spread=1.0, separation=1.0, stream=blob_stream(16))
        corrupted, plan = inject_spce(ds, 0.0, 5, blob_stream(17))
        assert len(plan) == 0
        np.testing.assert_array_equal(corrupted.labels, ds.labels)

    def test_four_point_hand_instance(self):
        # classes 0 and 1 each have an interior point and a boundary point;
        # the two boundary points are each other's closest cross-class pair
        features = np.array(
            [
                [1.0, 0.0],     # interior class 0
                [1.0, 0.2],     # boundary class 0
                [1.0, 0.3],     # boundary class 1
                [1.0, 1.0],     # interior class 1
            ]
        )
        ds = FeatureDataset(features=features, labels=np.array([0, 0, 1, 1]),
                            ids=np.arange(4), n_classes=2)
        corrupted, plan = inject_spce(ds, 0.5, K=2, stream=blob_stream(18))
        assert len(plan) == 2
        assert {e.sample_id for e in plan.entries} == {1, 2}
        np.testing.assert_array_equal(corrupted.labels, [0, 1, 0, 1])

    def test_planted_geometry_confines_swaps_to_close_pair(self):
        ds = make_confusable_blobs(
            400, 8, 4, spread=1.5, stream=blob_stream(19), pair_angle=0.15
        )
        corrupted, plan = inject_spce(ds, 0.05, K=10, stream=blob_stream(20))
        for e in plan.entries:
            assert e.original in (0, 1)
            assert e.corrupted in (0, 1)

    def test_undo_restores_original_labels(self):
        ds = make_blobs(300, 4, 5, spread=2.0, separation=1.0, stream=blob_stream(21))
        corrupted, plan = inject_spce(ds, 0.2, K=10, stream=blob_stream(22))
        assert len(plan) == 60
        restored = plan.undo(corrupted)
        np.testing.assert_array_equal(restored.labels, ds.labels)

    def test_at_most_once_relabeling(self):
        ds = make_blobs(200, 3, 3, spread=2.0, separation=1.0, stream=blob_stream(23))
        _, plan = inject_spce(ds, 0.4, K=10, stream=blob_stream(24))
        ids = plan.corrupted_ids()
        assert len(np.unique(ids)) == len(ids)

    def test_swaps_concentrate_near_boundaries(self):
        ds = make_blobs(500, 8, 4, spread=2.0, separation=1.0, stream=blob_stream(25))
        _, plan = inject_spce(ds, 0.1, K=10, stream=blob_stream(26))
        D = cosine_distances(ds.features)
        cross = ds.labels[None, :] != ds.labels[:, None]
        d_cross = np.where(cross, D, np.inf).min(axis=1)
        corrupted_mask = plan.truth_mask(ds.ids)
        assert d_cross[corrupted_mask].mean() < d_cross.mean()

    def test_deterministic_given_dataset(self):
        ds = make_blobs(150, 4, 3, spread=2.0, separation=1.0, stream=blob_stream(27))
        _, plan_a = inject_spce(ds, 0.2, K=5, stream=blob_stream(1))
        _, plan_b = inject_spce(ds, 0.2, K=5, stream=blob_stream(2))
        assert plan_a.entries == plan_b.entries


class TestFeatureDataset:
    def test_rejects_label_out_of_range(self):
        with pytest.raises(ValueError):
            FeatureDataset(
                features=np.ones((2, 2)),
                labels=np.array([0, 5]),
                ids=np.arange(2),
                n_classes=2,
            )

    def test_rejects_nonfinite_features(self):
        with pytest.raises(ValueError):
            FeatureDataset(
                features=np.array([[1.0, np.inf]]),
                labels=np.array([0]),
                ids=np.array([0]),
                n_classes=1,
            )

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ValueError):
            FeatureDataset(
                features=np.ones((2, 2)),
                labels=np.array([0, 1]),
                ids=np.array([3, 3]),
                n_classes=2,
            )
