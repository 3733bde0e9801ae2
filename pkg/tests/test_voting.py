"""Background filtering, mean shift, instance clustering, edge voting and the pose fit."""

from __future__ import annotations

import numpy as np
import pytest

from models.errors import ConfigurationError, EmptyInputError, ValidationError
from models.geometry import RigidTransform
from models.predictions import InstanceHypothesis, PredictionField
from utils.geometry import random_pose, rotation_error, transform_points
from utils.metrics import PoseMetrics
from utils.voting import (cluster_instances, estimate_pose, filter_background, mean_shift,
                          vote_edge_points)


# ── Helpers ──────────────────────────────────────────────────────────────

def _one_hot(columns, width: int) -> np.ndarray:
    conf = np.zeros((len(columns), width))
    conf[np.arange(len(columns)), columns] = 1.0
    return conf


def _field(points: np.ndarray, columns, num_classes: int, centers: np.ndarray,
           edge_targets: np.ndarray) -> PredictionField:
    """Exact offsets: every point votes for its own center and edge points"""
    return PredictionField(
        _one_hot(columns, num_classes + 1),
        edge_targets - points[:, None, :],
        centers - points,
    )


def _object_points(rng, center, count: int, radius: float = 0.04) -> np.ndarray:
    return center + rng.uniform(-radius, radius, size=(count, 3))


# ── Background filter ────────────────────────────────────────────────────

class TestFilterBackground:

    def test_all_background(self):
        conf = _one_hot([2, 2, 2], 3)
        pred = PredictionField(conf, np.zeros((3, 1, 3)), np.zeros((3, 3)))
        assert filter_background(pred) == {}

    def test_single_foreground_row(self):
        conf = _one_hot([4, 3, 4], 5)
        pred = PredictionField(conf, np.zeros((3, 1, 3)), np.zeros((3, 3)))
        groups = filter_background(pred)
        assert list(groups) == [3]
        np.testing.assert_array_equal(groups[3], [1])

    def test_mixed_confidences(self):
        conf = np.array([
            [0.7, 0.2, 0.1], [0.1, 0.1, 0.8], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4], [0.2, 0.6, 0.2],
            [0.1, 0.3, 0.6], [0.2, 0.45, 0.35], [0.5, 0.4, 0.1], [0.3, 0.2, 0.5], [0.05, 0.9, 0.05],
        ])
        pred = PredictionField(conf, np.zeros((10, 1, 3)), np.zeros((10, 3)))
        groups = filter_background(pred)
        np.testing.assert_array_equal(groups[1], [2, 4, 6, 9])
        np.testing.assert_array_equal(groups[0], [0, 7])

    def test_rejects_bad_probabilities(self):
        with pytest.raises(ValidationError):
            PredictionField(np.array([[0.5, 0.6]]), np.zeros((1, 1, 3)), np.zeros((1, 3)))


# ── Mean shift ───────────────────────────────────────────────────────────

class TestMeanShift:

    def test_single_sample(self):
        result = mean_shift(np.array([[0.1, 0.2, 0.3]]), bandwidth=0.05)
        np.testing.assert_array_equal(result.centers, [[0.1, 0.2, 0.3]])
        np.testing.assert_array_equal(result.assignment, [0])

    def test_identical_samples(self):
        samples = np.tile([0.3, -0.1, 0.7], (20, 1))
        result = mean_shift(samples, bandwidth=0.05)
        np.testing.assert_array_equal(result.centers, [[0.3, -0.1, 0.7]])
        np.testing.assert_array_equal(result.assignment, np.zeros(20))

    def test_two_blobs(self, rng):
        blob_a = rng.uniform(-0.01, 0.01, size=(50, 3)) + [0.0, 0.0, 1.0]
        blob_b = rng.uniform(-0.01, 0.01, size=(50, 3)) + [1.0, 0.0, 1.0]
        result = mean_shift(np.vstack([blob_a, blob_b]), bandwidth=0.05)
        assert result.centers.shape == (2, 3)
        for blob in (blob_a, blob_b):
            assert np.min(np.linalg.norm(result.centers - blob.mean(axis=0), axis=1)) < 0.01
        assert len(set(result.assignment[:50])) == 1
        assert len(set(result.assignment[50:])) == 1
        assert result.assignment[0] != result.assignment[50]

    def test_translation_moves_modes_along(self, rng):
        blobs = [rng.uniform(-0.01, 0.01, size=(count, 3)) + center
                 for count, center in ((40, [0.0, 0.0, 1.0]), (25, [0.5, 0.1, 0.9]), (60, [-0.4, 0.3, 1.2]))]
        samples = np.vstack(blobs)
        base = mean_shift(samples, bandwidth=0.05)
        for shift in ([0.25, -0.125, 0.5], [-1.3, 2.1, 0.07]):
            moved = mean_shift(samples + shift, bandwidth=0.05)
            np.testing.assert_allclose(moved.centers, base.centers + shift, atol=1e-9)
            np.testing.assert_array_equal(moved.assignment, base.assignment)

    def test_centers_stay_within_sample_bounds(self, rng):
        for _ in range(100):
            samples = rng.uniform(-1.0, 1.0, size=(int(rng.integers(1, 60)), 3))
            result = mean_shift(samples, bandwidth=float(rng.uniform(0.1, 1.0)))
            assert np.all(result.centers >= samples.min(axis=0) - 1e-12)
            assert np.all(result.centers <= samples.max(axis=0) + 1e-12)

    def test_zero_weight_samples_are_unassigned(self, rng):
        samples = rng.normal(size=(10, 3))
        weights = np.array([1.0] * 5 + [0.0] * 5)
        result = mean_shift(samples, bandwidth=0.5, weights=weights)
        assert np.all(result.assignment[5:] == -1)
        assert np.all(result.assignment[:5] >= 0)

    def test_zero_weight_rows_do_not_change_modes(self, rng):
        samples = rng.normal(scale=0.05, size=(300, 3))
        keep = np.sort(rng.choice(300, size=120, replace=False))
        weights = np.zeros(300)
        weights[keep] = 1.0
        padded = mean_shift(samples, bandwidth=0.04, weights=weights)
        alone = mean_shift(samples[keep], bandwidth=0.04)
        np.testing.assert_array_equal(padded.centers, alone.centers)
        np.testing.assert_array_equal(padded.assignment[keep], alone.assignment)

    def test_gaussian_kernel_single_blob(self, rng):
        samples = rng.uniform(-0.01, 0.01, size=(40, 3))
        result = mean_shift(samples, bandwidth=0.05, kernel="gaussian")
        assert result.centers.shape[0] == 1

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            mean_shift(np.zeros((0, 3)), bandwidth=0.05)

    def test_bad_bandwidth(self):
        with pytest.raises(ConfigurationError):
            mean_shift(np.zeros((2, 3)), bandwidth=0.0)

    def test_unknown_kernel(self):
        with pytest.raises(ConfigurationError):
            mean_shift(np.zeros((2, 3)), bandwidth=0.1, kernel="epanechnikov")


# ── Instance clustering ──────────────────────────────────────────────────

class TestClusterInstances:

    def test_one_object_exact_center(self, rng):
        center = np.array([0.05, -0.02, 0.6])
        points = _object_points(rng, center, 80)
        pred = _field(points, [0] * 80, 1, np.tile(center, (80, 1)), np.tile(center, (80, 1, 1)))
        hypotheses = cluster_instances(points, pred, bandwidth=0.05)
        assert len(hypotheses) == 1
        np.testing.assert_allclose(hypotheses[0].voted_center, center, atol=1e-9)
        assert hypotheses[0].n_points == 80

    def test_two_same_class_objects(self, rng):
        centers = np.array([[0.0, 0.0, 0.7], [0.5, 0.0, 0.7]])
        points = np.vstack([_object_points(rng, centers[0], 60), _object_points(rng, centers[1], 70)])
        targets = np.repeat(centers, [60, 70], axis=0)
        pred = _field(points, [0] * 130, 1, targets, targets[:, None, :])
        hypotheses = sorted(cluster_instances(points, pred, bandwidth=0.05), key=lambda h: h.voted_center[0])
        assert len(hypotheses) == 2
        np.testing.assert_array_equal(hypotheses[0].point_indices, np.arange(60))
        np.testing.assert_array_equal(hypotheses[1].point_indices, np.arange(60, 130))

    def test_noisy_offsets(self, rng):
        center = np.array([0.0, 0.1, 0.8])
        points = _object_points(rng, center, 200)
        offsets = center - points + rng.normal(0.0, 0.005, size=(200, 3))
        pred = PredictionField(_one_hot([0] * 200, 2), np.zeros((200, 1, 3)), offsets)
        hypotheses = cluster_instances(points, pred, bandwidth=0.05)
        assert len(hypotheses) == 1
        assert np.linalg.norm(hypotheses[0].voted_center - center) < 0.002

    def test_small_clusters_are_dropped(self, rng):
        center = np.array([0.0, 0.0, 0.5])
        points = _object_points(rng, center, 10)
        pred = _field(points, [0] * 10, 1, np.tile(center, (10, 1)), np.tile(center, (10, 1, 1)))
        assert cluster_instances(points, pred, min_cluster_size=30) == []

    def test_class_filter(self, rng):
        centers = np.array([[0.0, 0.0, 0.7], [0.4, 0.0, 0.7]])
        points = np.vstack([_object_points(rng, centers[0], 50), _object_points(rng, centers[1], 50)])
        targets = np.repeat(centers, 50, axis=0)
        pred = _field(points, [0] * 50 + [1] * 50, 2, targets, targets[:, None, :])
        hypotheses = cluster_instances(points, pred, class_id=1)
        assert len(hypotheses) == 1
        assert hypotheses[0].class_id == 1
        np.testing.assert_array_equal(hypotheses[0].point_indices, np.arange(50, 100))

    def test_full_pool_matches_filtered_pool(self, rng):
        centers = np.array([[0.0, 0.0, 0.7], [0.3, 0.0, 0.7]])
        points = np.vstack([_object_points(rng, centers[0], 60), _object_points(rng, centers[1], 60),
                            rng.uniform(-0.5, 0.5, size=(60, 3)) + [0.0, 0.0, 1.0]])
        targets = np.vstack([np.repeat(centers, 60, axis=0), np.zeros((60, 3))])
        offsets = targets - points + rng.normal(0.0, 0.004, size=points.shape)
        offsets[120:] = 0.0
        pred = PredictionField(_one_hot([0] * 120 + [1] * 60, 2), np.zeros((180, 1, 3)), offsets)
        filtered = cluster_instances(points, pred, class_id=0, pool=np.arange(120))
        unfiltered = cluster_instances(points, pred, class_id=0, pool=np.arange(180))
        assert len(filtered) == len(unfiltered) == 2
        for a, b in zip(filtered, unfiltered):
            np.testing.assert_array_equal(a.voted_center, b.voted_center)
            np.testing.assert_array_equal(a.point_indices, b.point_indices)


# ── Edge voting ──────────────────────────────────────────────────────────

class TestVoteEdgePoints:

    def _setup(self, rng, m: int = 4, count: int = 100):
        center = np.array([0.0, 0.0, 0.6])
        edge = center + rng.uniform(-0.05, 0.05, size=(m, 3))
        points = _object_points(rng, center, count)
        pred = _field(points, [0] * count, 1, np.tile(center, (count, 1)), np.tile(edge, (count, 1, 1)))
        hyp = InstanceHypothesis(0, np.arange(count), center)
        return points, pred, hyp, edge

    def test_exact_offsets(self, rng):
        points, pred, hyp, edge = self._setup(rng)
        voted = vote_edge_points(hyp, points, pred)
        np.testing.assert_allclose(voted.voted_edge_points, edge, atol=1e-9)
        np.testing.assert_array_equal(voted.vote_support, [100] * 4)

    def test_outlier_forms_minority_mode(self, rng):
        points, pred, hyp, edge = self._setup(rng, count=101)
        offsets = np.array(pred.edge_offsets)
        offsets[7, 0] += [1.0, 0.0, 0.0]
        pred = PredictionField(pred.class_confidence, offsets, pred.center_offset)
        voted = vote_edge_points(hyp, points, pred, bandwidth=0.05)
        np.testing.assert_allclose(voted.voted_edge_points[0], edge[0], atol=1e-9)
        assert voted.vote_support[0] == 100

    def test_noisy_offsets(self, rng):
        points, pred, hyp, edge = self._setup(rng, m=3, count=200)
        noisy = np.array(pred.edge_offsets) + rng.normal(0.0, 0.005, size=pred.edge_offsets.shape)
        pred = PredictionField(pred.class_confidence, noisy, pred.center_offset)
        voted = vote_edge_points(hyp, points, pred, bandwidth=0.03)
        assert np.max(np.linalg.norm(voted.voted_edge_points - edge, axis=1)) < 0.002

    def test_pool_without_members(self, rng):
        points, pred, hyp, _ = self._setup(rng)
        small = InstanceHypothesis(0, np.array([0, 1]), hyp.voted_center)
        with pytest.raises(ValidationError):
            vote_edge_points(small, points, pred, pool=np.array([5, 6]))


# ── Pose fit ─────────────────────────────────────────────────────────────

def _hypothesis(voted: np.ndarray) -> InstanceHypothesis:
    return InstanceHypothesis(0, np.arange(10), voted.mean(axis=0), voted, np.full(voted.shape[0], 10))


class TestEstimatePose:

    def test_identity(self, box_model):
        pose = estimate_pose(_hypothesis(box_model.edge_points), box_model)
        np.testing.assert_allclose(pose.R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(pose.t, np.zeros(3), atol=1e-12)

    def test_round_trip(self, rng, box_model):
        truth = random_pose(rng, 0.5)
        pose = estimate_pose(_hypothesis(transform_points(truth, box_model.edge_points)), box_model)
        assert rotation_error(pose.R, truth.R) < 1e-8
        np.testing.assert_allclose(pose.t, truth.t, atol=1e-8)

    def test_noisy_edge_points(self, rng, box_model):
        errors = []
        for _ in range(50):
            truth = random_pose(rng, 0.5)
            voted = transform_points(truth, box_model.edge_points) + rng.normal(0.0, 0.002, size=(8, 3))
            errors.append(PoseMetrics.add(estimate_pose(_hypothesis(voted), box_model), truth, box_model))
        assert np.mean(errors) < 0.005

    def test_vote_weights(self, rng, box_model):
        truth = random_pose(rng, 0.5)
        voted = transform_points(truth, box_model.edge_points)
        voted[0] += 0.5
        support = np.full(8, 10)
        support[0] = 0
        hyp = InstanceHypothesis(0, np.arange(10), voted.mean(axis=0), voted, support)
        pose = estimate_pose(hyp, box_model, use_vote_weights=True)
        assert rotation_error(pose.R, truth.R) < 1e-8

    def test_requires_edge_points(self, box_model):
        hyp = InstanceHypothesis(0, np.arange(3), np.zeros(3))
        with pytest.raises(ValidationError):
            estimate_pose(hyp, box_model)

    def test_edge_count_mismatch(self, box_model):
        with pytest.raises(ConfigurationError):
            estimate_pose(_hypothesis(box_model.edge_points[:5]), box_model)

    def test_pose_type(self, box_model):
        assert isinstance(estimate_pose(_hypothesis(box_model.edge_points), box_model), RigidTransform)
