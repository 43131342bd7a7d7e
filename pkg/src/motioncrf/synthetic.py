"""Synthetic three-frame stereo scene with an independently moving box.

The world is the camera frame at time 0. A textured background plane is
split into ``building`` (upper half) and ``road`` (lower half) and a
fronto-parallel ``car`` box moves with constant velocity in front of it
while the camera undergoes the same rigid motion between each frame pair.
Flows and disparities are analytic; object unaries are one-hot with a
claimed confidence, corrupted in square blocks.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .config import write_key_values
from .egomotion import CameraRig, FlowField, RigidMotion, flow_of_points, project_points
from .errors import ConfigError, InvalidParameter
from .grid import MOTION_LABELS, GridShape, LabelField, LabelSpace, PathLike, UnaryField, save_array, write_label_map
from .learning import cooccurrence_lambda
from .potentials import write_correlation_csv

logger = logging.getLogger(__name__)

OBJECT_LABELS = LabelSpace(("road", "building", "car"))
ROAD, BUILDING, CAR = 0, 1, 2
BASE_COLORS = np.array([[90.0, 90.0, 95.0], [160.0, 130.0, 110.0], [200.0, 40.0, 40.0]])
FEATURE_NAMES = ("red", "green", "blue", "row", "col", "flow_residual")


@dataclass(frozen=True)
class SceneParams:
    """Geometry, motion and noise of a synthetic scene."""

    height: int = 96
    width: int = 128
    seed: int = 0
    focal: float = 100.0
    baseline: float = 0.5
    plane_normal: Tuple[float, float, float] = (0.05, -0.1, 1.0)
    plane_offset: float = 15.0
    box_depth: float = 10.0
    box_rows: Tuple[float, float] = (0.3, 0.7)
    box_cols: Tuple[float, float] = (0.3, 0.6)
    box_velocity: Tuple[float, float, float] = (0.8, 0.0, 0.0)
    ego_rotvec: Tuple[float, float, float] = (0.0, math.radians(0.5), 0.0)
    ego_translation: Tuple[float, float, float] = (0.05, 0.0, 0.3)
    label_noise: float = 0.1
    noise_block: int = 8
    unary_confidence: float = 0.6
    flow_noise: float = 0.0
    texture_noise: float = 20.0

    def __post_init__(self) -> None:
        if self.height < 4 or self.width < 4:
            raise InvalidParameter(f"scene must be at least 4x4, got {self.height}x{self.width}")
        for name in ("box_rows", "box_cols"):
            low, high = getattr(self, name)
            if not 0.0 <= low < high <= 1.0:
                raise InvalidParameter(f"{name} must satisfy 0 <= low < high <= 1, got {(low, high)}")
        if not 0.0 <= self.label_noise <= 1.0:
            raise InvalidParameter(f"label_noise must lie in [0, 1], got {self.label_noise}")
        if self.noise_block < 1:
            raise InvalidParameter(f"noise_block must be >= 1, got {self.noise_block}")
        if not 1.0 / OBJECT_LABELS.count < self.unary_confidence < 1.0:
            raise InvalidParameter(f"unary_confidence must lie in (1/{OBJECT_LABELS.count}, 1)")
        if self.flow_noise < 0 or self.texture_noise < 0:
            raise InvalidParameter("noise levels must be >= 0")
        if self.box_depth <= 0 or self.plane_offset <= 0:
            raise InvalidParameter("box depth and plane offset must be positive")

    @property
    def rig(self) -> CameraRig:
        """Rig with the principal point at the image centre."""
        return CameraRig(self.focal, self.focal, self.width / 2.0, self.height / 2.0, self.baseline)

    @property
    def ego_motion(self) -> RigidMotion:
        """Camera motion of every frame pair."""
        return RigidMotion.from_rotvec(np.array(self.ego_rotvec), np.array(self.ego_translation))

    def box_pixels(self) -> Tuple[int, int, int, int]:
        """Return the frame-0 box extent as ``(top, bottom, left, right)``, half-open."""
        return (
            int(round(self.box_rows[0] * self.height)),
            int(round(self.box_rows[1] * self.height)),
            int(round(self.box_cols[0] * self.width)),
            int(round(self.box_cols[1] * self.width)),
        )


@dataclass(frozen=True)
class SyntheticScene:
    """All arrays of a generated scene, in memory."""

    params: SceneParams
    rig: CameraRig
    motions: Tuple[RigidMotion, RigidMotion]
    image: np.ndarray
    object_unary: UnaryField
    claimed: np.ndarray
    flows: Tuple[np.ndarray, np.ndarray]
    disparities: Tuple[np.ndarray, np.ndarray, np.ndarray]
    depths: Tuple[np.ndarray, np.ndarray, np.ndarray]
    moving_masks: Tuple[np.ndarray, np.ndarray, np.ndarray]
    gt_object: LabelField
    gt_motion: LabelField
    features: np.ndarray

    @property
    def shape(self) -> GridShape:
        """Image grid."""
        return self.gt_object.shape


def _camera_poses(motion: RigidMotion, count: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    poses = [(np.eye(3), np.zeros(3))]
    for _ in range(count - 1):
        rotation, translation = poses[-1]
        poses.append((motion.rotation @ rotation, motion.rotation @ translation + motion.translation))
    return poses


def _rays(shape: GridShape, rig: CameraRig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.divmod(np.arange(shape.size), shape.width)
    rays = np.stack(
        [(cols - rig.cx) / rig.fx, (rows - rig.cy) / rig.fy, np.ones(shape.size)], axis=1
    )
    return rays, cols.astype(np.float64), rows.astype(np.float64)


def _box_bounds(params: SceneParams, rig: CameraRig) -> Tuple[float, float, float, float]:
    top, bottom, left, right = params.box_pixels()
    z = params.box_depth
    return (
        (left - 0.5 - rig.cx) * z / rig.fx,
        (right - 0.5 - rig.cx) * z / rig.fx,
        (top - 0.5 - rig.cy) * z / rig.fy,
        (bottom - 0.5 - rig.cy) * z / rig.fy,
    )


def _surface(
    params: SceneParams, rig: CameraRig, pose: Tuple[np.ndarray, np.ndarray], frame: int, rays: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Visible surface points in camera coordinates and the box-hit mask."""
    rotation, translation = pose
    normal = rotation @ np.array(params.plane_normal)
    offset = params.plane_offset + normal @ translation
    with np.errstate(divide="ignore"):
        t_plane = offset / (rays @ normal)
    t_plane = np.where(t_plane > 0, t_plane, np.inf)

    velocity = np.array(params.box_velocity)
    box_normal = rotation[:, 2]
    box_offset = params.box_depth + frame * velocity[2] + box_normal @ translation
    with np.errstate(divide="ignore"):
        t_box = box_offset / (rays @ box_normal)
    world = (t_box[:, None] * rays - translation) @ rotation
    x0, x1, y0, y1 = _box_bounds(params, rig)
    shift = frame * velocity
    hit = (
        (t_box > 0)
        & (t_box < t_plane)
        & (world[:, 0] >= x0 + shift[0])
        & (world[:, 0] < x1 + shift[0])
        & (world[:, 1] >= y0 + shift[1])
        & (world[:, 1] < y1 + shift[1])
    )
    depth = np.where(hit, t_box, t_plane)
    return depth[:, None] * rays, hit


def generate_scene(params: SceneParams) -> SyntheticScene:
    """Render a scene deterministically from ``params.seed``."""
    rng = np.random.default_rng(params.seed)
    shape = GridShape(params.height, params.width)
    rig = params.rig
    ego = params.ego_motion
    poses = _camera_poses(ego, 3)
    rays, cols, rows = _rays(shape, rig)
    velocity = np.array(params.box_velocity)
    moves = bool(np.any(velocity != 0.0))

    surfaces = []
    hits = []
    for frame, pose in enumerate(poses):
        points, hit = _surface(params, rig, pose, frame, rays)
        surfaces.append(points)
        hits.append(hit)

    flows = []
    for frame in range(2):
        points, hit = surfaces[frame], hits[frame]
        rotation, translation = poses[frame]
        next_rotation, next_translation = poses[frame + 1]
        moved = ego.apply(points)
        world = (points[hit] - translation) @ rotation + velocity
        moved[hit] = world @ next_rotation.T + next_translation
        u2, v2 = project_points(moved, rig)
        flow = np.stack([u2 - cols, v2 - rows], axis=1)
        if params.flow_noise > 0:
            flow = flow + rng.normal(0.0, params.flow_noise, flow.shape)
        flows.append(flow.reshape(shape.height, shape.width, 2))

    depths = tuple(points[:, 2].reshape(shape.height, shape.width) for points in surfaces)
    disparities = tuple(rig.disparity(depth) for depth in depths)
    masks = tuple(
        (hit if moves else np.zeros_like(hit)).reshape(shape.height, shape.width) for hit in hits
    )

    truth = np.where(rows < shape.height // 2, BUILDING, ROAD).astype(np.int64)
    truth[hits[0]] = CAR
    truth = truth.reshape(shape.height, shape.width)
    gt_object = LabelField(shape, OBJECT_LABELS, truth)
    gt_motion = LabelField(shape, MOTION_LABELS, masks[0].astype(np.uint8))

    image = BASE_COLORS[truth] + rng.uniform(-params.texture_noise, params.texture_noise, (shape.height, shape.width, 3))
    image = np.clip(image, 0.0, 255.0)

    claimed = truth.copy()
    block = params.noise_block
    grid_rows = -(-shape.height // block)
    grid_cols = -(-shape.width // block)
    noisy = rng.random((grid_rows, grid_cols)) < params.label_noise
    offsets = rng.integers(1, OBJECT_LABELS.count, size=(grid_rows, grid_cols))
    for r, c in zip(*np.nonzero(noisy)):
        window = claimed[r * block : (r + 1) * block, c * block : (c + 1) * block]
        window[...] = (window + offsets[r, c]) % OBJECT_LABELS.count
    n = OBJECT_LABELS.count
    costs = np.full((shape.size, n), -math.log((1.0 - params.unary_confidence) / (n - 1)))
    costs[np.arange(shape.size), claimed.reshape(-1)] = -math.log(params.unary_confidence)
    object_unary = UnaryField(shape, OBJECT_LABELS, costs)

    static_flow = flow_of_points(cols, rows, depths[0].reshape(-1), ego, rig)
    residual = np.linalg.norm(flows[0].reshape(-1, 2) - static_flow, axis=1)
    features = np.concatenate(
        [
            image / 255.0,
            (rows / shape.height).reshape(shape.height, shape.width, 1),
            (cols / shape.width).reshape(shape.height, shape.width, 1),
            residual.reshape(shape.height, shape.width, 1),
        ],
        axis=2,
    )
    logger.info(
        "synthetic scene %dx%d: %d moving pixels, %d noisy unary pixels",
        shape.height,
        shape.width,
        int(masks[0].sum()),
        int(np.count_nonzero(claimed != truth)),
    )
    return SyntheticScene(
        params=params,
        rig=rig,
        motions=(ego, ego),
        image=image,
        object_unary=object_unary,
        claimed=claimed,
        flows=(flows[0], flows[1]),
        disparities=disparities,
        depths=depths,
        moving_masks=masks,
        gt_object=gt_object,
        gt_motion=gt_motion,
        features=features,
    )


def scene_description(scene: SyntheticScene) -> dict:
    """Describe the true geometry as a JSON-serializable record."""
    params = asdict(scene.params)
    return {
        "params": params,
        "rig": asdict(scene.rig),
        "ego_motion": [
            {"rotvec": motion.rotvec.tolist(), "translation": motion.translation.tolist()} for motion in scene.motions
        ],
        "box_pixels": list(scene.params.box_pixels()),
        "object_labels": list(OBJECT_LABELS.names),
        "feature_names": list(FEATURE_NAMES),
    }


def write_scene(scene: SyntheticScene, out_dir: PathLike) -> List[Path]:
    """Write the full artifact set and return the written paths.

    Raises:
        ConfigError: When the directory cannot be created or written.
    """
    root = Path(out_dir)
    try:
        (root / "gt").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"{root}: cannot create output directory ({exc.strerror})") from None

    written: List[Path] = []

    def target(name: str) -> Path:
        path = root / name
        written.append(path)
        return path

    try:
        save_array(target("image.tnsr"), scene.image)
        save_array(target("unary_object.tnsr"), scene.object_unary.image())
        save_array(target("flow_01.tnsr"), scene.flows[0])
        save_array(target("flow_12.tnsr"), scene.flows[1])
        for frame, disparity in enumerate(scene.disparities):
            save_array(target(f"disparity_{frame}.tnsr"), disparity)
        save_array(target("features.tnsr"), scene.features)
        write_label_map(target("gt/labels_object.pgm"), scene.gt_object)
        write_label_map(target("gt/labels_motion.pgm"), scene.gt_motion)
        write_correlation_csv(target("correlation.csv"), cooccurrence_lambda([scene.gt_object], [scene.gt_motion]))
        rig = scene.rig
        write_key_values(
            target("rig.cfg"),
            {"fx": rig.fx, "fy": rig.fy, "cx": rig.cx, "cy": rig.cy, "baseline": rig.baseline},
        )
        write_key_values(target("labels.cfg"), {"object_labels": ",".join(OBJECT_LABELS.names)})
        write_key_values(
            target("scene.cfg"),
            {
                "object_unary": "unary_object.tnsr",
                "image": "image.tnsr",
                "flow_01": "flow_01.tnsr",
                "flow_12": "flow_12.tnsr",
                "disparity_0": "disparity_0.tnsr",
                "disparity_1": "disparity_1.tnsr",
                "disparity_2": "disparity_2.tnsr",
                "correlation": "correlation.csv",
                "rig": "rig.cfg",
                "object_labels": ",".join(OBJECT_LABELS.names),
                "w_corr": 5.0,
                "seed": scene.params.seed,
                "output_dir": "out",
            },
        )
        with open(target("scene.json"), "w", encoding="utf-8") as handle:
            json.dump(scene_description(scene), handle, sort_keys=True, indent=2)
            handle.write("\n")
    except OSError as exc:
        raise ConfigError(f"{root}: cannot write scene ({exc.strerror})") from None
    logger.info("wrote %d scene files to %s", len(written), root)
    return written


def flow_field(scene: SyntheticScene, pair: int) -> FlowField:
    """Return the flow of frame pair ``pair`` (0 for 0->1, 1 for 1->2)."""
    return FlowField.from_array(scene.flows[pair])
