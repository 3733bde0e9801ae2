"""
Flat key-value configuration.

A config file is a YAML mapping of plain keys to scalars (or short lists for
lambdas / hidden_sizes). Values resolve as: command-line flags > config
file > dataclass defaults.
"""
import logging
import math
import numbers
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from models.config import NoiseConfig, PipelineConfig, PointRoleWeights, TrainConfig
from models.errors import ConfigurationError
from models.geometry import CameraIntrinsics

# Setup logging
logger = logging.getLogger(__name__)

ROLE_KEYS = ("w_keypoint", "w_background", "w_others")
NOISE_KEYS = ("depth_sigma", "offset_sigma", "label_flip_rate", "dropout_rate")
INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")
NESTED_FIELDS = ("role_weights", "noise", "intrinsics")
PIPELINE_KEYS = tuple(f.name for f in fields(PipelineConfig) if f.name not in NESTED_FIELDS)
TRAIN_KEYS = ("learning_rate", "momentum", "epochs", "batch_points", "dks_k", "hidden_sizes")

KNOWN_KEYS = frozenset(PIPELINE_KEYS + ROLE_KEYS + NOISE_KEYS + INTRINSIC_KEYS + TRAIN_KEYS)


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a flat YAML config file.

    Raises:
        ConfigurationError: missing file, not a mapping, nested values or unknown keys
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file {path} does not exist")
    try:
        document = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Config file {path} is not valid YAML: {e}") from e
    if not isinstance(document, dict):
        raise ConfigurationError(f"Config file {path} must be a key-value mapping")
    for key, value in document.items():
        if isinstance(value, dict):
            raise ConfigurationError(f"Config key {key!r} must hold a scalar, the config file is flat")
    check_keys(document)
    logger.info(f"Loaded {len(document)} settings from {path}")
    return document


def check_keys(values: Dict[str, Any]) -> None:
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigurationError(f"Unknown config key {unknown[0]!r}")


def _typed(key: str, value: Any, kind: type) -> Any:
    try:
        if kind is bool:
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("true", "yes", "1", "on"):
                    return True
                if lowered in ("false", "no", "0", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind is tuple:
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split()]
            return tuple(float(v) for v in value)
        if kind is int:
            return _whole_number(value)
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Config key {key!r}: cannot read {value!r} as {kind.__name__}") from e


def _whole_number(value: Any) -> int:
    """Integer value of an int, integral float or numeric string; anything lossy is rejected"""
    if isinstance(value, bool):
        raise TypeError(value)
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, str):
        try:
            return int(value.strip())
        except ValueError:
            pass
    number = float(value)
    if not (math.isfinite(number) and number.is_integer()):
        raise ValueError(value)
    return int(number)


def _section(values: Dict[str, Any], keys, defaults) -> Dict[str, Any]:
    picked = {}
    for key in keys:
        if key in values:
            picked[key] = _typed(key, values[key], type(getattr(defaults, key)))
    return picked


def build_configs(values: Dict[str, Any]) -> Tuple[PipelineConfig, TrainConfig]:
    """
    Build the pipeline and trainer settings from one flat mapping.

    Shared keys (seed, lambdas, role weights, k_keypoints -> dks_k, selector,
    loss settings) apply to both.
    """
    check_keys(values)
    base = PipelineConfig()
    pipeline_values = _section(values, PIPELINE_KEYS, base)
    seed = pipeline_values.get("seed", base.seed)

    roles = PointRoleWeights(**_section(values, ROLE_KEYS, base.role_weights))
    noise = NoiseConfig(seed=seed, **_section(values, NOISE_KEYS, base.noise))
    intrinsics = CameraIntrinsics(**_section(values, INTRINSIC_KEYS, base.intrinsics))
    pipeline = PipelineConfig(role_weights=roles, noise=noise, intrinsics=intrinsics, **pipeline_values)

    train_defaults = TrainConfig()
    train_values = _section(values, ("learning_rate", "momentum", "epochs", "batch_points"), train_defaults)
    if "dks_k" in values:
        train_values["dks_k"] = _typed("dks_k", values["dks_k"], int)
    elif "k_keypoints" in values:
        train_values["dks_k"] = pipeline.k_keypoints
    if "hidden_sizes" in values:
        train_values["hidden_sizes"] = tuple(int(v) for v in _typed("hidden_sizes", values["hidden_sizes"], tuple))
    train = TrainConfig(
        seed=seed,
        lambdas=pipeline.lambdas,
        role_weights=roles,
        selector=pipeline.selector,
        focal_alpha=pipeline.focal_alpha,
        focal_gamma=pipeline.focal_gamma,
        loss_norm=pipeline.loss_norm,
        **train_values,
    )
    return pipeline, train


def resolve_configs(config_path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> Tuple[PipelineConfig, TrainConfig]:
    """
    Merge defaults, an optional config file and command-line overrides
    (None values are "not given" and do not override).
    """
    values: Dict[str, Any] = {}
    if config_path is not None:
        values.update(load_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_configs(values)
