"""
Synthetic RGBD-like scenes with exact ground truth.

Objects are analytic shapes (box, cylinder, sphere, L-shape) ray-cast per
pixel in front of a textured background plane; the nearest surface wins.
The generated labels, poses and offsets stand in for a dataset, and
oracle_predictions stands in for a trained network.
"""
import concurrent.futures
import logging
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.config import BackgroundPlane, NoiseConfig
from models.errors import ConfigurationError, GeometryError
from models.geometry import CameraIntrinsics, RigidTransform
from models.predictions import PredictionField
from models.scene import BACKGROUND, InstanceRecord, ObjectModel, SceneSample
from utils.cache_utils import cache
from utils.geometry import backproject, random_rotation, transform_points
from utils.keypoints import select_edge_points

# Setup logging
logger = logging.getLogger(__name__)

SHAPES = ("box", "cylinder", "sphere", "lshape")
DIMENSION_COUNT = {"box": 3, "cylinder": 2, "sphere": 1, "lshape": 3}
SYMMETRIC_SHAPES = {"sphere", "cylinder"}
# Arm thickness of the L-shape as a fraction of its footprint
LSHAPE_ARM = 0.4

# Saturated per-class base colors; background stays gray
CLASS_PALETTE = np.array([
    [0.85, 0.15, 0.10],
    [0.10, 0.70, 0.20],
    [0.15, 0.25, 0.90],
    [0.90, 0.80, 0.10],
    [0.70, 0.15, 0.80],
    [0.10, 0.75, 0.80],
])
BACKGROUND_GRAYS = (0.35, 0.6)

# Small frame used by the toy trainer and quick tests
SMALL_INTRINSICS = CameraIntrinsics(fx=150.0, fy=150.0, cx=80.0, cy=60.0, width=160, height=120)

DEFAULT_MODEL_SPECS = (
    ("box", (0.10, 0.15, 0.08)),
    ("cylinder", (0.04, 0.16)),
    ("sphere", (0.06,)),
    ("lshape", (0.12, 0.12, 0.05)),
)


# ─── Object models ─────────────────────────────────────────────

def _check_dims(shape: str, dims: Sequence[float]) -> Tuple[float, ...]:
    if shape not in SHAPES:
        raise ConfigurationError(f"Unknown shape {shape!r}, expected one of {SHAPES}")
    dims = tuple(float(d) for d in dims)
    if len(dims) != DIMENSION_COUNT[shape] or any(d <= 0 for d in dims):
        raise ConfigurationError(f"Shape {shape} needs {DIMENSION_COUNT[shape]} positive dimensions, got {dims}")
    return dims


def _lshape_boxes(dims: Tuple[float, ...]) -> List[Tuple[np.ndarray, np.ndarray]]:
    """The L-shape as two (center, half-extent) boxes"""
    a, b, c = dims
    arm_a = np.array([a / 2, LSHAPE_ARM * b / 2, c / 2])
    arm_b = np.array([LSHAPE_ARM * a / 2, b / 2, c / 2])
    center_a = np.array([0.0, -b / 2 + arm_a[1], 0.0])
    center_b = np.array([-a / 2 + arm_b[0], 0.0, 0.0])
    return [(center_a, arm_a), (center_b, arm_b)]


def _sample_box_surface(rng, center, half, count) -> np.ndarray:
    areas = np.array([half[1] * half[2], half[1] * half[2],
                      half[0] * half[2], half[0] * half[2],
                      half[0] * half[1], half[0] * half[1]])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    pts[np.arange(count), axis] = sign * half[axis]
    return pts + center


def _sample_surface(shape: str, dims: Tuple[float, ...], count: int, rng: np.random.Generator) -> np.ndarray:
    if shape == "box":
        half = np.array(dims) / 2
        corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * half
        if count <= 8:
            return corners[:count]
        return np.vstack([corners, _sample_box_surface(rng, np.zeros(3), half, count - 8)])

    if shape == "sphere":
        directions = rng.standard_normal((count, 3))
        return directions / np.linalg.norm(directions, axis=1, keepdims=True) * dims[0]

    if shape == "cylinder":
        radius, height = dims
        side, cap = 2 * np.pi * radius * height, np.pi * radius ** 2
        part = rng.choice(3, size=count, p=np.array([side, cap, cap]) / (side + 2 * cap))
        angle = rng.uniform(0.0, 2 * np.pi, size=count)
        rho = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(0.0, 1.0, size=count)))
        z = np.where(part == 0, rng.uniform(-height / 2, height / 2, size=count),
                     np.where(part == 1, height / 2, -height / 2))
        return np.stack([rho * np.cos(angle), rho * np.sin(angle), z], axis=1)

    # lshape: surfaces of both arms minus the parts buried inside the other arm
    boxes = _lshape_boxes(dims)
    collected = []
    total = 0
    while total < count:
        for own, other in ((0, 1), (1, 0)):
            pts = _sample_box_surface(rng, boxes[own][0], boxes[own][1], count)
            inside = np.all(np.abs(pts - boxes[other][0]) < boxes[other][1] - 1e-12, axis=1)
            collected.append(pts[~inside])
            total += int(np.count_nonzero(~inside))
    pts = np.vstack(collected)
    return pts[rng.permutation(pts.shape[0])[:count]]


@cache()
def make_model(shape: str, dims: Sequence[float], vertex_count: int = 500, m: int = 8, seed: int = 0,
               class_id: int = 0, name: str = "", symmetric: Optional[bool] = None) -> ObjectModel:
    """
    Sample an analytic object model.

    Args:
        shape: "box", "cylinder", "sphere" or "lshape"
        dims: box/lshape (x, y, z) extents, cylinder (radius, height), sphere (radius,)
        vertex_count: Number of surface vertices
        m: Number of edge points to select
        seed: Sampling seed
        class_id: Class the model belongs to
        symmetric: Override of the analytic symmetry flag (boxes default to asymmetric)

    Returns:
        ObjectModel with exact diameter and selected edge points
    """
    dims = _check_dims(shape, dims)
    if m < 3 or vertex_count < m:
        raise ConfigurationError(f"Need vertex_count >= m >= 3, got vertex_count={vertex_count}, m={m}")
    rng = np.random.default_rng(seed)
    vertices = _sample_surface(shape, dims, vertex_count, rng)
    if symmetric is None:
        symmetric = shape in SYMMETRIC_SHAPES

    model = ObjectModel.from_vertices(class_id, vertices, symmetric=symmetric,
                                      name=name or shape, shape=shape, dims=dims)
    model = replace(model, edge_points=select_edge_points(model, m))
    logger.info(f"Built {shape} model class={class_id} q={vertex_count} diameter={model.diameter:.4f} m")
    return model


def default_model_set(m: int = 8, vertex_count: int = 500, seed: int = 0) -> List[ObjectModel]:
    """Four reference objects with class ids 0..3"""
    return [
        make_model(shape, dims, vertex_count=vertex_count, m=m, seed=seed + class_id,
                   class_id=class_id, name=f"{shape}_{class_id}")
        for class_id, (shape, dims) in enumerate(DEFAULT_MODEL_SPECS)
    ]


# ─── Ray casting ───────────────────────────────────────────────

def _hit_box(o: np.ndarray, v: np.ndarray, center: np.ndarray, half: np.ndarray):
    o = o - center
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / v
        t2 = (half - o) / v
    parallel = v == 0
    inside_slab = np.abs(o) < half
    t_lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    t_hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = t_lo.max(axis=1)
    t_far = t_hi.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 0)
    axis = np.argmax(t_lo, axis=1)
    rows = np.arange(v.shape[0])
    face = axis * 2 + (v[rows, axis] > 0)
    return np.where(hit, t_near, np.inf), face


def _hit_sphere(o: np.ndarray, v: np.ndarray, radius: float):
    a = np.einsum("ij,ij->i", v, v)
    b = 2 * np.einsum("ij,ij->i", o, v)
    c = np.einsum("ij,ij->i", o, o) - radius ** 2
    disc = b * b - 4 * a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    t = (-b - root) / (2 * a)
    hit = (disc >= 0) & (t > 0)
    p = o + t[:, None] * v
    face = (p[:, 0] > 0) * 1 + (p[:, 1] > 0) * 2 + (p[:, 2] > 0) * 4
    return np.where(hit, t, np.inf), face


def _hit_cylinder(o: np.ndarray, v: np.ndarray, radius: float, height: float):
    half = height / 2
    a = v[:, 0] ** 2 + v[:, 1] ** 2
    b = 2 * (o[:, 0] * v[:, 0] + o[:, 1] * v[:, 1])
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - radius ** 2
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a)
        z_side = o[:, 2] + t_side * v[:, 2]
        side_ok = (a > 0) & (disc >= 0) & (t_side > 0) & (np.abs(z_side) <= half)
        best = np.where(side_ok, t_side, np.inf)
        face = np.zeros(v.shape[0], dtype=np.int64)
        for cap_face, cap_z in ((1, half), (2, -half)):
            t_cap = (cap_z - o[:, 2]) / v[:, 2]
            px = o[:, 0] + t_cap * v[:, 0]
            py = o[:, 1] + t_cap * v[:, 1]
            cap_ok = (v[:, 2] != 0) & (t_cap > 0) & (px ** 2 + py ** 2 <= radius ** 2) & (t_cap < best)
            best = np.where(cap_ok, t_cap, best)
            face = np.where(cap_ok, cap_face, face)
    return best, face


def _cast(shape: str, dims: Tuple[float, ...], o: np.ndarray, v: np.ndarray):
    if shape == "box":
        return _hit_box(o, v, np.zeros(3), np.array(dims) / 2)
    if shape == "sphere":
        return _hit_sphere(o, v, dims[0])
    if shape == "cylinder":
        return _hit_cylinder(o, v, dims[0], dims[1])
    (center_a, half_a), (center_b, half_b) = _lshape_boxes(dims)
    t_a, face_a = _hit_box(o, v, center_a, half_a)
    t_b, face_b = _hit_box(o, v, center_b, half_b)
    return np.minimum(t_a, t_b), np.where(t_a <= t_b, face_a, face_b + 6)


def _model_dims(model: ObjectModel) -> Tuple[float, ...]:
    """Analytic dimensions of a model, estimated from the vertices when not recorded"""
    if model.dims:
        return _check_dims(model.shape, model.dims)
    v = model.vertices
    if model.shape == "sphere":
        return (float(np.linalg.norm(v, axis=1).max()),)
    if model.shape == "cylinder":
        return (float(np.linalg.norm(v[:, :2], axis=1).max()), float(v[:, 2].max() - v[:, 2].min()))
    if model.shape in ("box", "lshape"):
        return tuple(float(x) for x in v.max(axis=0) - v.min(axis=0))
    raise ConfigurationError(f"Cannot render model shape {model.shape!r}")


def _pixel_window(pose: RigidTransform, radius: float, intr: CameraIntrinsics):
    """Conservative pixel rectangle covering a posed bounding sphere"""
    x, y, z = pose.t
    if z - radius <= 0:
        raise GeometryError(f"Object at depth {z:.3f} m with radius {radius:.3f} m is not in front of the camera")
    ratios_x = [(x - radius) / (z - radius), (x - radius) / (z + radius),
                (x + radius) / (z - radius), (x + radius) / (z + radius)]
    ratios_y = [(y - radius) / (z - radius), (y - radius) / (z + radius),
                (y + radius) / (z - radius), (y + radius) / (z + radius)]
    u0 = int(np.floor(intr.cx + intr.fx * min(ratios_x))) - 1
    u1 = int(np.ceil(intr.cx + intr.fx * max(ratios_x))) + 1
    v0 = int(np.floor(intr.cy + intr.fy * min(ratios_y))) - 1
    v1 = int(np.ceil(intr.cy + intr.fy * max(ratios_y))) + 1
    return max(u0, 0), min(u1, intr.width - 1), max(v0, 0), min(v1, intr.height - 1)


def _object_color(class_id: int, face: np.ndarray) -> np.ndarray:
    base = CLASS_PALETTE[class_id % len(CLASS_PALETTE)]
    shade = 0.7 + 0.3 * (face % 4) / 3.0
    return np.clip(base[None, :] * shade[:, None], 0.0, 1.0)


# ─── Scenes ────────────────────────────────────────────────────

def render_scene(models: Sequence[ObjectModel], poses: Sequence[RigidTransform],
                 intr: CameraIntrinsics = CameraIntrinsics(), background: BackgroundPlane = BackgroundPlane(),
                 noise: NoiseConfig = NoiseConfig(), n_points: int = 12000, scene_id: int = 0,
                 num_classes: Optional[int] = None) -> SceneSample:
    """
    Render posed models over a background plane and sample the seed points.

    Args:
        models: Object models, one per instance
        poses: Object-to-camera poses, one per instance
        intr: Camera intrinsics
        background: Background plane
        noise: depth_sigma, dropout_rate and seed are used here
        n_points: Number of seed points N to sample from the valid pixels
        scene_id: Scene identifier, also mixed into the random stream
        num_classes: Size of the class label space (default: max class id + 1)

    Returns:
        SceneSample with exact labels, poses and offsets
    """
    if len(models) != len(poses):
        raise ConfigurationError(f"Got {len(models)} models but {len(poses)} poses")
    if num_classes is None:
        num_classes = max((model.class_id for model in models), default=0) + 1
    rng = np.random.default_rng([noise.seed, scene_id])

    h, w = intr.height, intr.width
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    rays = np.stack([(us.ravel() - intr.cx) / intr.fx, (vs.ravel() - intr.cy) / intr.fy, np.ones(h * w)], axis=1)

    # Background plane
    normal = np.asarray(background.normal, dtype=np.float64)
    denom = rays @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        zbuffer = np.where(denom > 0, background.offset / denom, np.inf)
    plane_pts = rays * np.where(np.isfinite(zbuffer), zbuffer, 0.0)[:, None]
    checker = (np.floor(plane_pts[:, 0] / background.checker_size)
               + np.floor(plane_pts[:, 1] / background.checker_size)).astype(np.int64) % 2
    color = np.repeat(np.where(checker == 0, *BACKGROUND_GRAYS)[:, None], 3, axis=1)
    class_label = np.full(h * w, BACKGROUND, dtype=np.int64)
    instance_label = np.full(h * w, BACKGROUND, dtype=np.int64)

    instances = []
    for instance_id, (model, pose) in enumerate(zip(models, poses)):
        posed = transform_points(pose, model.vertices)
        if np.any(posed[:, 2] <= 0):
            raise GeometryError(f"Instance {instance_id} ({model.name}) lies partly behind the camera")
        radius = float(np.linalg.norm(model.vertices, axis=1).max())
        u0, u1, v0, v1 = _pixel_window(pose, radius, intr)
        instances.append(InstanceRecord(model.class_id, instance_id, pose, model, model.name))
        if u0 > u1 or v0 > v1:
            continue

        win_u, win_v = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
        pix = (win_v * w + win_u).ravel()
        origin = np.broadcast_to(-(pose.R.T @ pose.t), (pix.shape[0], 3))
        directions = rays[pix] @ pose.R
        t_hit, face = _cast(model.shape, _model_dims(model), origin, directions)
        closer = t_hit < zbuffer[pix]
        pix, t_hit, face = pix[closer], t_hit[closer], face[closer]
        zbuffer[pix] = t_hit
        class_label[pix] = model.class_id
        instance_label[pix] = instance_id
        color[pix] = _object_color(model.class_id, face)

    valid = np.isfinite(zbuffer) & (zbuffer > 0)
    if noise.dropout_rate > 0:
        valid &= rng.random(h * w) >= noise.dropout_rate
    depth = np.where(valid, zbuffer, 0.0)
    if noise.depth_sigma > 0:
        depth = np.where(valid, depth + rng.normal(0.0, noise.depth_sigma, size=depth.shape), 0.0)
        depth = np.where(depth > 0, depth, 0.0)
    depth_image = depth.reshape(h, w)

    cloud = backproject(depth_image, intr)
    pixel_index = cloud.source_pixel[:, 1] * w + cloud.source_pixel[:, 0]
    if len(cloud) > n_points:
        keep = np.sort(rng.choice(len(cloud), size=n_points, replace=False))
        cloud = cloud.subset(keep)
        pixel_index = pixel_index[keep]

    scene = assemble_scene(scene_id, cloud, class_label[pixel_index], instance_label[pixel_index],
                           instances, color[pixel_index], num_classes, intr, depth_image)
    logger.info(f"Rendered scene {scene_id}: {scene.n_points} points, "
                f"{int(np.count_nonzero(scene.foreground_mask))} foreground, {len(instances)} instances")
    return scene


def assemble_scene(scene_id, cloud, class_label, instance_label, instances, color, num_classes,
                   intr=CameraIntrinsics(), depth=None) -> SceneSample:
    """Build a SceneSample, deriving the offsets from the exact instance poses"""
    points = cloud.points
    m = max((record.model.num_edge_points for record in instances), default=0)
    edge_offsets = np.zeros((points.shape[0], m, 3))
    center_offset = np.zeros((points.shape[0], 3))
    for record in instances:
        rows = np.flatnonzero(instance_label == record.instance_id)
        if rows.shape[0] == 0:
            continue
        edge_targets = transform_points(record.gt_pose, record.model.edge_points)
        center_target = transform_points(record.gt_pose, record.model.centroid)[0]
        edge_offsets[rows] = edge_targets[None, :, :] - points[rows][:, None, :]
        center_offset[rows] = center_target - points[rows]
    return SceneSample(scene_id, cloud, class_label, instance_label, instances, edge_offsets,
                       center_offset, color, num_classes, intr, depth)


def select_scene_points(scene: SceneSample, indices: np.ndarray) -> SceneSample:
    """Scene restricted to a subset of its points (ground truth carried along)"""
    indices = np.asarray(indices, dtype=np.int64)
    return replace(
        scene,
        cloud=scene.cloud.subset(indices),
        class_label=scene.class_label[indices],
        instance_label=scene.instance_label[indices],
        gt_edge_offsets=scene.gt_edge_offsets[indices],
        gt_center_offset=scene.gt_center_offset[indices],
        synthetic_color=scene.synthetic_color[indices],
    )


def random_layout(models: Sequence[ObjectModel], rng: np.random.Generator, n_objects: int = 3,
                  depth_range: Tuple[float, float] = (0.65, 0.85)) -> Tuple[List[ObjectModel], List[RigidTransform]]:
    """
    Pick n_objects models and place them side by side, randomly rotated,
    with enough spacing that they do not interpenetrate.
    """
    if n_objects <= 0:
        raise ConfigurationError("n_objects must be positive")
    choice = rng.choice(len(models), size=n_objects, replace=n_objects > len(models))
    chosen = [models[i] for i in choice]
    spacing = 1.1 * max(float(np.linalg.norm(m.vertices, axis=1).max()) * 2 for m in chosen)
    poses = []
    for slot, model in enumerate(chosen):
        x = (slot - (n_objects - 1) / 2.0) * spacing
        y = rng.uniform(-0.03, 0.03)
        z = rng.uniform(*depth_range)
        poses.append(RigidTransform(random_rotation(rng), np.array([x, y, z])))
    return chosen, poses


def random_scene(models: Sequence[ObjectModel], scene_id: int, intr: CameraIntrinsics = CameraIntrinsics(),
                 noise: NoiseConfig = NoiseConfig(), n_points: int = 12000, n_objects: int = 3,
                 plane_depth: float = 1.0, num_classes: Optional[int] = None) -> SceneSample:
    """Random layout rendered into a scene, reproducible from (noise.seed, scene_id)"""
    rng = np.random.default_rng([noise.seed, scene_id, 7])
    chosen, poses = random_layout(models, rng, n_objects, depth_range=(0.65 * plane_depth, 0.85 * plane_depth))
    if num_classes is None:
        num_classes = max(model.class_id for model in models) + 1
    return render_scene(chosen, poses, intr, BackgroundPlane(offset=plane_depth), noise,
                        n_points=n_points, scene_id=scene_id, num_classes=num_classes)


def standard_training_set(seed: int = 0, n_scenes: int = 4, n_points: int = 1500,
                          m: int = 8) -> List[SceneSample]:
    """
    Small two-class training set (box and cylinder) on the 160x120 frame.
    Classes differ in color, so the semantic task is separable.
    """
    models = default_model_set(m=m, seed=seed)[:2]
    scenes = []
    for scene_id in range(n_scenes):
        rng = np.random.default_rng([seed, scene_id, 11])
        poses = [
            RigidTransform(random_rotation(rng), np.array([-0.06, rng.uniform(-0.02, 0.02), rng.uniform(0.45, 0.55)])),
            RigidTransform(random_rotation(rng), np.array([0.06, rng.uniform(-0.02, 0.02), rng.uniform(0.45, 0.55)])),
        ]
        scenes.append(render_scene(models, poses, SMALL_INTRINSICS, BackgroundPlane(offset=0.7),
                                   NoiseConfig(seed=seed), n_points=n_points, scene_id=scene_id,
                                   num_classes=2))
    return scenes


def oracle_predictions(scene: SceneSample, noise: NoiseConfig = NoiseConfig()) -> PredictionField:
    """
    Ground-truth predictions with controllable corruption.

    A label_flip_rate share of points moves to a uniformly random wrong
    column (background included); offset_sigma adds isotropic Gaussian noise
    to every offset.
    """
    rng = np.random.default_rng([noise.seed, scene.scene_id, 1])
    n, c = scene.n_points, scene.num_classes
    columns = np.where(scene.class_label == BACKGROUND, c, scene.class_label)
    if noise.label_flip_rate > 0:
        flip = rng.random(n) < noise.label_flip_rate
        shift = rng.integers(1, c + 1, size=n)
        columns = np.where(flip, (columns + shift) % (c + 1), columns)
    confidence = np.zeros((n, c + 1))
    confidence[np.arange(n), columns] = 1.0

    edge = scene.gt_edge_offsets.copy()
    center = scene.gt_center_offset.copy()
    if noise.offset_sigma > 0:
        edge += rng.normal(0.0, noise.offset_sigma, size=edge.shape)
        center += rng.normal(0.0, noise.offset_sigma, size=center.shape)
    return PredictionField(confidence, edge, center)


def scene_batch(models: Sequence[ObjectModel], n_scenes: int, intr: CameraIntrinsics = CameraIntrinsics(),
                noise: NoiseConfig = NoiseConfig(), n_points: int = 12000, n_objects: int = 3,
                plane_depth: float = 1.0, workers: int = 4, first_scene_id: int = 0) -> List[SceneSample]:
    """Independent random scenes rendered in parallel, returned in scene id order"""
    num_classes = max(model.class_id for model in models) + 1
    scene_ids = list(range(first_scene_id, first_scene_id + n_scenes))
    scenes = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
        future_to_id = {
            executor.submit(random_scene, models, scene_id, intr, noise, n_points, n_objects,
                            plane_depth, num_classes): scene_id
            for scene_id in scene_ids
        }
        for future in concurrent.futures.as_completed(future_to_id):
            scene_id = future_to_id[future]
            try:
                scenes[scene_id] = future.result()
            except Exception as e:
                logger.error(f"Error rendering scene {scene_id}: {e}")
                raise
    return [scenes[scene_id] for scene_id in scene_ids]


def with_background_share(scene: SceneSample, share: float, seed: int = 0) -> SceneSample:
    """
    Scene keeping every foreground point plus enough randomly chosen
    background points that they make up `share` of the result.
    """
    if not 0.0 <= share < 1.0:
        raise ConfigurationError(f"Background share must lie in [0, 1), got {share}")
    foreground = np.flatnonzero(scene.foreground_mask)
    background = np.flatnonzero(~scene.foreground_mask)
    wanted = int(round(share / (1.0 - share) * foreground.shape[0]))
    if wanted > background.shape[0]:
        raise ConfigurationError(f"Scene {scene.scene_id} has only {background.shape[0]} background points, "
                                 f"{wanted} needed for a {share:.0%} share")
    rng = np.random.default_rng([seed, scene.scene_id, 3])
    keep = np.sort(np.concatenate([foreground, rng.choice(background, size=wanted, replace=False)]))
    return select_scene_points(scene, keep)
