"""
Readers and writers for the on-disk artifacts: 16-bit depth images, object
models, scenes, pose / vote tables and network checkpoints.

Real numbers in JSON documents are stored as repr() strings so that values
survive a write/read cycle bit for bit.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Union

import numpy as np
import pandas as pd

from models.errors import ValidationError
from models.geometry import CameraIntrinsics, PointCloud, RigidTransform
from models.mlp import MlpModel
from models.scene import InstanceRecord, ObjectModel, SceneSample

# Setup logging
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FORMAT_VERSION = 1
DEPTH_SCALE = 1000.0  # millimetres per meter
DEPTH_MAX_MM = 65535
CHECKPOINT_MAGIC = b"EVMLP\x00"
CHECKPOINT_VERSION = 1

POSE_COLUMNS = ["scene_id", "instance_id", "class_id",
                "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
                "tx", "ty", "tz"]
VOTE_COLUMNS = ["scene_id", "instance_id", "class_id", "edge_index", "x", "y", "z", "support"]


class PoseRow(NamedTuple):
    scene_id: int
    instance_id: int
    class_id: int
    pose: RigidTransform


def _reals(values) -> List:
    """Nested lists of repr strings"""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 0:
        return repr(float(array))
    return [_reals(v) for v in array]


def _parse_reals(values) -> np.ndarray:
    return np.asarray(values, dtype=str).astype(np.float64)


def _check_version(document: dict, path: PathLike) -> None:
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")


# ─── Depth ─────────────────────────────────────────────────────

def write_depth16(path: PathLike, depth_m: np.ndarray) -> None:
    """
    Write a metric depth image as `.d16`: little-endian (width, height)
    header followed by row-major uint16 millimetres. Depth is rounded to the
    nearest millimetre; 0 stays "no depth".
    """
    depth_m = np.asarray(depth_m, dtype=np.float64)
    if depth_m.ndim != 2 or not np.all(np.isfinite(depth_m)) or np.any(depth_m < 0):
        raise ValidationError("Depth image must be a finite, nonnegative H x W array")
    millimetres = np.rint(depth_m * DEPTH_SCALE)
    if np.any(millimetres > DEPTH_MAX_MM):
        raise ValidationError(f"Depth beyond {DEPTH_MAX_MM / DEPTH_SCALE} m does not fit in 16 bits")
    height, width = depth_m.shape
    with open(path, "wb") as handle:
        handle.write(struct.pack("<II", width, height))
        handle.write(millimetres.astype("<u2").tobytes())


def read_depth16(path: PathLike) -> np.ndarray:
    """Depth image in meters from a `.d16` file"""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValidationError(f"{path}: truncated depth header")
    width, height = struct.unpack_from("<II", data, 0)
    expected = 8 + 2 * width * height
    if len(data) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes for {width}x{height}, got {len(data)}")
    millimetres = np.frombuffer(data, dtype="<u2", offset=8).reshape(height, width)
    return millimetres.astype(np.float64) / DEPTH_SCALE


# ─── Models ────────────────────────────────────────────────────

def model_to_document(model: ObjectModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "class_id": int(model.class_id),
        "name": model.name,
        "shape": model.shape,
        "dims": _reals(model.dims) if model.dims else [],
        "symmetric": bool(model.symmetric),
        "diameter": repr(float(model.diameter)),
        "vertices": _reals(model.vertices),
        "edge_points": _reals(model.edge_points),
    }


def model_from_document(document: dict, path: PathLike = "<model>") -> ObjectModel:
    _check_version(document, path)
    try:
        return ObjectModel(
            class_id=int(document["class_id"]),
            vertices=_parse_reals(document["vertices"]),
            diameter=float(document["diameter"]),
            symmetric=bool(document["symmetric"]),
            edge_points=_parse_reals(document["edge_points"]),
            name=document.get("name", ""),
            shape=document.get("shape", "mesh"),
            dims=tuple(float(d) for d in document.get("dims", [])),
        )
    except KeyError as e:
        raise ValidationError(f"{path}: model document misses field {e}") from e


def write_model_json(path: PathLike, model: ObjectModel) -> None:
    Path(path).write_text(json.dumps(model_to_document(model), indent=1))


def read_model_json(path: PathLike) -> ObjectModel:
    return model_from_document(json.loads(Path(path).read_text()), path)


# ─── Scenes ────────────────────────────────────────────────────

def write_scene_json(path: PathLike, scene: SceneSample, model_paths: Dict[int, str],
                     depth_file: str = "") -> None:
    """
    Write a scene document. model_paths maps each instance id to the
    model.json file of its object (stored as given, usually relative).
    """
    intr = scene.intrinsics
    pixels = scene.cloud.source_pixel
    points = []
    for i in range(scene.n_points):
        points.append({
            "xyz": _reals(scene.points[i]),
            "uv": [int(v) for v in pixels[i]] if pixels is not None else None,
            "class": int(scene.class_label[i]),
            "instance": int(scene.instance_label[i]),
            "color": _reals(scene.synthetic_color[i]),
        })
    document = {
        "format_version": FORMAT_VERSION,
        "scene_id": int(scene.scene_id),
        "num_classes": int(scene.num_classes),
        "intrinsics": {
            "fx": repr(intr.fx), "fy": repr(intr.fy), "cx": repr(intr.cx), "cy": repr(intr.cy),
            "width": intr.width, "height": intr.height,
        },
        "depth_file": depth_file,
        "points": points,
        "instances": [
            {
                "class_id": int(record.class_id),
                "instance_id": int(record.instance_id),
                "pose": _reals(record.gt_pose.as_row()),
                "model": model_paths[record.instance_id],
            }
            for record in scene.instances
        ],
    }
    Path(path).write_text(json.dumps(document))


def read_scene_json(path: PathLike, load_model: Callable[[str], ObjectModel] = None) -> SceneSample:
    """
    Read a scene document. Offsets are recomputed from the stored poses and
    models; model paths are resolved relative to the scene file.
    """
    # Imported lazily: the generator package depends on this module's types only
    from generators.synth_scene import assemble_scene

    path = Path(path)
    document = json.loads(path.read_text())
    _check_version(document, path)
    if load_model is None:
        def load_model(reference: str) -> ObjectModel:
            return read_model_json(path.parent / reference)

    try:
        raw_intr = document["intrinsics"]
        intr = CameraIntrinsics(float(raw_intr["fx"]), float(raw_intr["fy"]), float(raw_intr["cx"]),
                                float(raw_intr["cy"]), int(raw_intr["width"]), int(raw_intr["height"]))
        records = document["points"]
        xyz = _parse_reals([r["xyz"] for r in records]).reshape(-1, 3)
        has_pixels = bool(records) and all(r.get("uv") is not None for r in records)
        pixels = np.asarray([r["uv"] for r in records], dtype=np.int64) if has_pixels else None
        class_label = np.asarray([r["class"] for r in records], dtype=np.int64)
        instance_label = np.asarray([r["instance"] for r in records], dtype=np.int64)
        color = _parse_reals([r["color"] for r in records]).reshape(-1, 3)

        instances = []
        for entry in document["instances"]:
            instances.append(InstanceRecord(
                class_id=int(entry["class_id"]),
                instance_id=int(entry["instance_id"]),
                gt_pose=RigidTransform.from_row(_parse_reals(entry["pose"])),
                model=load_model(entry["model"]),
                model_ref=entry["model"],
            ))
        depth = None
        if document.get("depth_file"):
            depth_path = path.parent / document["depth_file"]
            if depth_path.exists():
                depth = read_depth16(depth_path)
        return assemble_scene(int(document["scene_id"]), PointCloud(xyz, pixels), class_label,
                              instance_label, instances, color, int(document["num_classes"]), intr, depth)
    except KeyError as e:
        raise ValidationError(f"{path}: scene document misses field {e}") from e


# ─── Tables ────────────────────────────────────────────────────

def read_poses_csv(path: PathLike) -> List[PoseRow]:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in POSE_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: pose table misses columns {missing}")
    rows = []
    for record in frame.itertuples(index=False):
        values = [getattr(record, c) for c in POSE_COLUMNS[3:]]
        rows.append(PoseRow(int(record.scene_id), int(record.instance_id), int(record.class_id),
                            RigidTransform.from_row(values)))
    return rows


def read_votes_csv(path: PathLike) -> Dict[tuple, np.ndarray]:
    """Voted edge points keyed by (scene_id, instance_id), rows in edge order"""
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in VOTE_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: vote table misses columns {missing}")
    votes = {}
    for (scene_id, instance_id), group in frame.groupby(["scene_id", "instance_id"], sort=True):
        group = group.sort_values("edge_index")
        votes[(int(scene_id), int(instance_id))] = group[["x", "y", "z"]].to_numpy(dtype=np.float64)
    return votes


# ─── Checkpoints ───────────────────────────────────────────────

def save_checkpoint(path: PathLike, model: MlpModel) -> None:
    """
    Binary checkpoint: magic, version, layer count, (input dim, classes,
    edge points), per-layer (rows, cols), then input shift and scale and
    every weight matrix and bias as little-endian float64, row-major.
    """
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", CHECKPOINT_VERSION))
        handle.write(struct.pack("<I", len(model.weights)))
        handle.write(struct.pack("<III", model.input_dim, model.num_classes, model.m_edge_points))
        for rows, cols in model.layer_shapes:
            handle.write(struct.pack("<II", rows, cols))
        handle.write(model.input_shift.astype("<f8").tobytes())
        handle.write(model.input_scale.astype("<f8").tobytes())
        for w, b in zip(model.weights, model.biases):
            handle.write(np.ascontiguousarray(w).astype("<f8").tobytes())
            handle.write(b.astype("<f8").tobytes())
    logger.info(f"Saved checkpoint with {len(model.weights)} layers to {path}")


def load_checkpoint(path: PathLike) -> MlpModel:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValidationError(f"{path}: not a checkpoint file")
    offset = len(CHECKPOINT_MAGIC)
    try:
        version, n_layers = struct.unpack_from("<II", data, offset)
        offset += 8
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        input_dim, num_classes, m = struct.unpack_from("<III", data, offset)
        offset += 12
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from("<II", data, offset))
            offset += 8

        def take(count: int) -> np.ndarray:
            nonlocal offset
            if offset + 8 * count > len(data):
                raise ValidationError(f"{path}: truncated checkpoint")
            values = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
            offset += 8 * count
            return values

        shift = take(input_dim)
        scale = take(input_dim)
        weights, biases = [], []
        for rows, cols in shapes:
            weights.append(take(rows * cols).reshape(rows, cols))
            biases.append(take(cols))
    except struct.error as e:
        raise ValidationError(f"{path}: truncated checkpoint header") from e
    if offset != len(data):
        raise ValidationError(f"{path}: {len(data) - offset} trailing bytes after the parameters")
    return MlpModel(weights, biases, num_classes, m, input_shift=shift, input_scale=scale)
