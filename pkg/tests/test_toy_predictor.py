"""Features, forward/backward passes and training of the point-wise MLP."""

from __future__ import annotations

import numpy as np
import pytest

from generators.synth_scene import standard_training_set
from models.config import (ROLE_BACKGROUND, ROLE_KEYPOINT, ROLE_OTHER,
                           PointRoleWeights, TrainConfig)
from models.errors import (ConfigurationError, EmptyInputError,
                           TrainingDivergedError, ValidationError)
from models.mlp import MlpModel
from models.predictions import FeatureMap, PredictionField
from models.scene import BACKGROUND
from utils import toy_predictor
from utils.metrics import PoseMetrics
from utils.toy_predictor import (FEATURE_DIM, LossBreakdown, assign_roles,
                                 count_parameters, featurize, featurize_points,
                                 forward, forward_pass, gradient_check,
                                 init_model, multi_task_gradient, predict_scene,
                                 standardisation, targets_from_scene, train)


# ── Helpers ──────────────────────────────────────────────────────────────

def _tiny_model(seed: int = 0, num_classes: int = 2, m: int = 2) -> MlpModel:
    return init_model(4, num_classes, m, (5,), np.random.default_rng(seed))


def _far_truth(n: int, num_classes: int = 2, m: int = 2, seed: int = 0) -> PredictionField:
    """One-hot labels and offsets far from anything the tiny model outputs"""
    rng = np.random.default_rng(seed)
    conf = np.zeros((n, num_classes + 1))
    conf[np.arange(n), rng.integers(0, num_classes + 1, size=n)] = 1.0
    return PredictionField(conf, np.full((n, m, 3), 5.0), np.full((n, 3), 5.0))


def _fast_train_config(**overrides) -> TrainConfig:
    settings = dict(epochs=3, batch_points=128, hidden_sizes=(8,), dks_k=5, seed=3)
    settings.update(overrides)
    return TrainConfig(**settings)


@pytest.fixture(scope="module")
def tiny_training_set():
    return standard_training_set(seed=0, n_scenes=2, n_points=400)


# ── Features ─────────────────────────────────────────────────────────────

class TestFeaturize:
    def test_single_point(self):
        fm = featurize_points([[0.1, 0.2, 0.3]], [[0.5, 0.5, 0.5]])
        assert fm.values.shape == (1, FEATURE_DIM)
        np.testing.assert_allclose(fm.values[0, :6], 0.0, atol=1e-15)
        np.testing.assert_allclose(fm.values[0, 6:], 0.5)

    def test_planar_patch_has_flat_covariance(self):
        u, v = np.meshgrid(np.linspace(0, 0.05, 8), np.linspace(0, 0.05, 8))
        points = np.stack([u.ravel(), v.ravel(), np.full(u.size, 0.4)], axis=1)
        fm = featurize_points(points, np.zeros_like(points))
        np.testing.assert_allclose(fm.values[:, 3], 0.0, atol=1e-15)
        assert np.all(fm.values[:, 4] > 0)

    def test_eigenvalues_ascending(self, rng):
        fm = featurize_points(rng.normal(size=(200, 3)), rng.uniform(size=(200, 3)))
        eig = fm.values[:, 3:6]
        assert np.all(np.diff(eig, axis=1) >= 0)
        assert np.all(eig >= 0)

    def test_translation_invariant(self, rng):
        points = rng.normal(scale=0.1, size=(300, 3))
        colors = rng.uniform(size=(300, 3))
        a = featurize_points(points, colors)
        b = featurize_points(points + np.array([1.0, -2.0, 3.0]), colors)
        np.testing.assert_allclose(a.values, b.values, atol=1e-9)

    def test_scene_features(self, tiny_training_set):
        scene = tiny_training_set[0]
        fm = featurize(scene)
        assert fm.values.shape == (scene.n_points, FEATURE_DIM)
        np.testing.assert_array_equal(fm.point_index, np.arange(scene.n_points))

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            featurize_points(np.zeros((0, 3)), np.zeros((0, 3)))

    def test_color_count_mismatch(self):
        with pytest.raises(ConfigurationError):
            featurize_points(np.zeros((4, 3)), np.zeros((3, 3)))


# ── Network ──────────────────────────────────────────────────────────────

class TestMlpModel:
    def test_output_dim(self):
        model = _tiny_model(num_classes=3, m=8)
        assert model.output_dim == 4 + 24 + 3
        assert model.layer_shapes == [(4, 5), (5, 31)]

    def test_count_parameters(self):
        model = init_model(FEATURE_DIM, 2, 8, (64, 64), np.random.default_rng(0))
        assert count_parameters(model) == (9 * 64 + 64) + (64 * 64 + 64) + (64 * 30 + 30)

    def test_bias_mismatch(self):
        with pytest.raises(ValidationError):
            MlpModel([np.zeros((4, 8))], [np.zeros(7)], num_classes=1, m_edge_points=1)

    def test_layers_must_chain(self):
        with pytest.raises(ValidationError):
            MlpModel([np.zeros((4, 5)), np.zeros((6, 8))], [np.zeros(5), np.zeros(8)],
                     num_classes=1, m_edge_points=1)

    def test_wrong_output_width(self):
        with pytest.raises(ValidationError):
            MlpModel([np.zeros((4, 9))], [np.zeros(9)], num_classes=1, m_edge_points=1)

    def test_non_finite(self):
        w = np.zeros((4, 8))
        w[0, 0] = np.nan
        with pytest.raises(ValidationError):
            MlpModel([w], [np.zeros(8)], num_classes=1, m_edge_points=1)

    def test_non_positive_scale(self):
        with pytest.raises(ValidationError):
            MlpModel([np.zeros((4, 8))], [np.zeros(8)], num_classes=1, m_edge_points=1,
                     input_shift=np.zeros(4), input_scale=np.array([1.0, 0.0, 1.0, 1.0]))

    def test_copy_is_independent(self):
        model = _tiny_model()
        clone = model.copy()
        clone.weights[0][0, 0] += 1.0
        assert model.weights[0][0, 0] != clone.weights[0][0, 0]

    def test_standardisation_constant_channel(self):
        shift, scale = standardisation(np.array([[1.0, 2.0], [3.0, 2.0]]))
        np.testing.assert_allclose(shift, [2.0, 2.0])
        np.testing.assert_allclose(scale, [1.0, 1.0])


class TestForward:
    def test_zero_network_is_uniform(self):
        model = _tiny_model(num_classes=2, m=3)
        for p in model.parameters():
            p[...] = 0.0
        pred = forward(model, FeatureMap.dense(np.random.default_rng(1).normal(size=(6, 4))))
        np.testing.assert_allclose(pred.class_confidence, 1.0 / 3.0)
        np.testing.assert_array_equal(pred.edge_offsets, np.zeros((6, 3, 3)))
        np.testing.assert_array_equal(pred.center_offset, np.zeros((6, 3)))

    def test_linear_model_by_hand(self):
        # one class, one edge point: logits (2) | edge (3) | center (3)
        w = np.zeros((2, 8))
        b = np.zeros(8)
        w[0, 2] = 1.0    # edge x <- feature 0
        w[1, 7] = -2.0   # center z <- -2 * feature 1
        b[0] = np.log(3.0)
        model = MlpModel([w], [b], num_classes=1, m_edge_points=1)
        pred = forward(model, FeatureMap.dense(np.array([[0.5, 0.25]])))
        np.testing.assert_allclose(pred.class_confidence, [[0.75, 0.25]])
        np.testing.assert_allclose(pred.edge_offsets, [[[0.5, 0.0, 0.0]]])
        np.testing.assert_allclose(pred.center_offset, [[0.0, 0.0, -0.5]])

    def test_rows_are_probabilities(self, rng):
        model = _tiny_model()
        pred = forward(model, FeatureMap.dense(rng.normal(scale=10.0, size=(50, 4))))
        np.testing.assert_allclose(pred.class_confidence.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(pred.class_confidence >= 0)

    def test_standardisation_applied(self):
        model = _tiny_model()
        shifted = MlpModel(model.weights, model.biases, 2, 2,
                           input_shift=np.full(4, 10.0), input_scale=np.full(4, 2.0))
        values = np.random.default_rng(2).normal(size=(5, 4))
        np.testing.assert_allclose(forward_pass(shifted, 10.0 + 2.0 * values).outputs,
                                   forward_pass(model, values).outputs, atol=1e-12)

    def test_feature_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            forward(_tiny_model(), FeatureMap.dense(np.zeros((3, 5))))

    def test_predict_scene_class_mismatch(self, tiny_training_set):
        model = init_model(FEATURE_DIM, 3, 8, (4,), np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            predict_scene(model, tiny_training_set[0])


# ── Loss and gradients ───────────────────────────────────────────────────

class TestGradients:
    @pytest.mark.parametrize("loss_norm", ["l1", "l2"])
    def test_matches_finite_differences(self, loss_norm):
        model = _tiny_model(seed=4)
        values = np.random.default_rng(5).normal(size=(6, 4))
        error = gradient_check(model, FeatureMap.dense(values), _far_truth(6), loss_norm=loss_norm)
        assert error < 1e-4

    def test_with_point_roles(self):
        model = _tiny_model(seed=6)
        values = np.random.default_rng(7).normal(size=(6, 4))
        roles = np.array([ROLE_KEYPOINT, ROLE_OTHER, ROLE_BACKGROUND, ROLE_KEYPOINT, ROLE_OTHER, ROLE_OTHER])
        weights = PointRoleWeights(w_background=0.5).with_roles(roles)
        error = gradient_check(model, FeatureMap.dense(values), _far_truth(6, seed=1),
                               weights=weights, lambdas=(2.0, 0.5, 1.5), focal_gamma=0.5)
        assert error < 1e-4

    def test_zero_lambdas_give_zero_loss(self):
        model = _tiny_model()
        values = np.random.default_rng(8).normal(size=(4, 4))
        targets = toy_predictor.targets_from_prediction(_far_truth(4))
        weights = PointRoleWeights().with_roles(np.zeros(4, dtype=np.int8))
        breakdown, d_outputs = multi_task_gradient(model, forward_pass(model, values).outputs,
                                                   targets, weights, lambdas=(0.0, 0.0, 0.0))
        assert breakdown.total == 0.0
        np.testing.assert_array_equal(d_outputs, 0.0)

    def test_background_rows_carry_no_offset_gradient(self):
        model = _tiny_model()
        values = np.random.default_rng(9).normal(size=(5, 4))
        targets = toy_predictor.targets_from_prediction(_far_truth(5))
        weights = PointRoleWeights(w_background=0.0).with_roles(np.full(5, ROLE_BACKGROUND))
        breakdown, d_outputs = multi_task_gradient(model, forward_pass(model, values).outputs,
                                                   targets, weights)
        assert breakdown.edge == 0.0
        assert breakdown.center == 0.0
        np.testing.assert_array_equal(d_outputs[:, 3:], 0.0)
        assert np.any(d_outputs[:, :3] != 0.0)


class TestTargets:
    def test_background_in_last_column(self, tiny_training_set):
        scene = tiny_training_set[0]
        targets = targets_from_scene(scene)
        background = scene.class_label == BACKGROUND
        np.testing.assert_array_equal(targets.labels.sum(axis=1), 1.0)
        np.testing.assert_array_equal(targets.labels[background, -1], 1.0)
        np.testing.assert_array_equal(np.argmax(targets.labels[~background], axis=1),
                                      scene.class_label[~background])

    def test_row_subset(self, tiny_training_set):
        scene = tiny_training_set[0]
        rows = np.array([3, 1, 7])
        targets = targets_from_scene(scene, rows)
        np.testing.assert_array_equal(targets.edge_offsets, scene.gt_edge_offsets[rows])


# ── Training ─────────────────────────────────────────────────────────────

class TestAssignRoles:
    @pytest.mark.parametrize("selector", ["dks", "fps"])
    def test_roles(self, tiny_training_set, selector):
        scene = tiny_training_set[0]
        rows = np.arange(scene.n_points)
        roles = assign_roles(scene, rows, featurize(scene).values, 10, selector)
        background = scene.class_label == BACKGROUND
        np.testing.assert_array_equal(roles[background], ROLE_BACKGROUND)
        assert np.sum(roles == ROLE_KEYPOINT) == 10
        assert not np.any(background[roles == ROLE_KEYPOINT])

    def test_keypoints_spread_over_instances(self, tiny_training_set):
        scene = tiny_training_set[0]
        rows = np.arange(scene.n_points)
        roles = assign_roles(scene, rows, featurize(scene).values, 6)
        instances = scene.instance_label[roles == ROLE_KEYPOINT]
        assert set(np.unique(instances)) == set(np.unique(scene.instance_label[scene.instance_label != BACKGROUND]))

    def test_zero_k(self, tiny_training_set):
        scene = tiny_training_set[0]
        roles = assign_roles(scene, np.arange(scene.n_points), featurize(scene).values, 0)
        assert not np.any(roles == ROLE_KEYPOINT)


class TestTrain:
    def test_history_length(self, tiny_training_set):
        model, history = train(tiny_training_set, _fast_train_config())
        assert len(history) == 3
        assert model.is_finite()
        assert model.layer_shapes[0] == (FEATURE_DIM, 8)

    def test_zero_learning_rate_keeps_loss(self, tiny_training_set):
        _, history = train(tiny_training_set, _fast_train_config(learning_rate=0.0))
        assert history[0] == history[1] == history[2]

    def test_reproducible(self, tiny_training_set):
        a_model, a_history = train(tiny_training_set, _fast_train_config())
        b_model, b_history = train(tiny_training_set, _fast_train_config())
        assert a_history == b_history
        for a, b in zip(a_model.parameters(), b_model.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_fps_selector(self, tiny_training_set):
        _, history = train(tiny_training_set, _fast_train_config(selector="fps"))
        assert all(np.isfinite(history))

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            train([], _fast_train_config())

    def test_divergence_detected(self, tiny_training_set, monkeypatch):
        original = toy_predictor.multi_task_gradient

        def exploding(*args, **kwargs):
            breakdown, d_outputs = original(*args, **kwargs)
            return LossBreakdown(float("inf"), *breakdown[1:]), d_outputs

        monkeypatch.setattr(toy_predictor, "multi_task_gradient", exploding)
        with pytest.raises(TrainingDivergedError):
            train(tiny_training_set, _fast_train_config())

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=-0.1)
        with pytest.raises(ConfigurationError):
            TrainConfig(selector="random")

    @pytest.mark.slow
    def test_converges_on_standard_set(self):
        model, history = train(standard_training_set(seed=0), TrainConfig(seed=0))
        assert len(history) == 200
        assert history[-1] < 0.5 * history[0]

        held_out = standard_training_set(seed=1, n_scenes=2)
        predicted = np.concatenate([predict_scene(model, s).argmax_labels() for s in held_out])
        truth = np.concatenate([s.class_label for s in held_out])
        assert PoseMetrics.miou(predicted, truth) >= 90.0
