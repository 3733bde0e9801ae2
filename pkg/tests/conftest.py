"""Shared fixtures: seeded generators, reference models and small scenes."""

from __future__ import annotations

import numpy as np
import pytest

from generators.synth_scene import default_model_set, make_model, random_scene
from models.config import NoiseConfig, PipelineConfig
from models.geometry import CameraIntrinsics
from models.scene import ObjectModel


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def model_set() -> list[ObjectModel]:
    return default_model_set()


@pytest.fixture(scope="session")
def model_map(model_set) -> dict[int, ObjectModel]:
    return {m.class_id: m for m in model_set}


@pytest.fixture(scope="session")
def box_model() -> ObjectModel:
    return make_model("box", (0.10, 0.15, 0.08), vertex_count=400, class_id=0)


@pytest.fixture(scope="session")
def small_cfg() -> PipelineConfig:
    return PipelineConfig(n_points=5000, repeat=1, workers=2)


@pytest.fixture(scope="session")
def clean_scene(model_set, small_cfg):
    """Three-object frame without sensor noise"""
    return random_scene(model_set, 0, CameraIntrinsics(), NoiseConfig(), small_cfg.n_points,
                        n_objects=3, plane_depth=1.0, num_classes=len(model_set))


@pytest.fixture(scope="session")
def clean_scenes(model_set, small_cfg):
    return [
        random_scene(model_set, scene_id, CameraIntrinsics(), NoiseConfig(), small_cfg.n_points,
                     n_objects=3, plane_depth=1.0, num_classes=len(model_set))
        for scene_id in range(3)
    ]
