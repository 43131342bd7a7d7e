"""Geometric motion likelihood from stereo disparity and optical flow.

Pixels are lifted to 3D with ``z = fx * baseline / d``, the camera's rigid
motion between two frames is estimated by RANSAC over minimal three-point
sets, and each pixel's measured flow is compared with the flow a static
point would show under that motion. The Mahalanobis residual is the cost of
the ``stationary`` label; ``moving`` costs a constant ``tau_move``.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    InsufficientData,
    InvalidParameter,
    NoConsensus,
    NonFiniteValue,
    NonPositiveDepth,
    NonPositiveDisparity,
    ShapeMismatch,
    SingularCovariance,
)
from .grid import MOTION_LABELS, GridShape, UnaryField

logger = logging.getLogger(__name__)

DEFAULT_TAU_MOVE = 5.99
MIN_INLIER_RATIO = 0.1
OCCLUSION_MARGIN = 0.1
_ORTHONORMAL_TOL = 1e-9


def _positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise InvalidParameter(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class CameraRig:
    """Rectified stereo rig: pinhole intrinsics plus baseline in meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float

    def __post_init__(self) -> None:
        for name in ("fx", "fy", "baseline"):
            _positive(name, getattr(self, name))
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise InvalidParameter("principal point must be finite")

    @property
    def intrinsics(self) -> np.ndarray:
        """The 3x3 camera matrix ``K``."""
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def depth(self, disparity: np.ndarray) -> np.ndarray:
        """Convert to depth in meters for strictly positive disparities."""
        return self.fx * self.baseline / np.asarray(disparity, dtype=np.float64)

    def disparity(self, depth: np.ndarray) -> np.ndarray:
        """Convert to disparity in pixels for strictly positive depths."""
        return self.fx * self.baseline / np.asarray(depth, dtype=np.float64)


@dataclass(frozen=True)
class RigidMotion:
    """Camera motion mapping frame-t points to frame-t+1: ``P' = R P + T``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise NonFiniteValue("rigid motion must be finite")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > _ORTHONORMAL_TOL:
            raise InvalidParameter("rotation matrix is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > _ORTHONORMAL_TOL:
            raise InvalidParameter("rotation matrix must have determinant +1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidMotion":
        """Return the motion that leaves points in place."""
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec: np.ndarray, translation: np.ndarray) -> "RigidMotion":
        """Build from an axis-angle vector in radians."""
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @property
    def rotvec(self) -> np.ndarray:
        """Axis-angle form of the rotation."""
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform ``(N, 3)`` points."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def rotation_error(self, other: "RigidMotion") -> float:
        """Return the angle in radians of ``R_other^T R``."""
        delta = Rotation.from_matrix(other.rotation.T @ self.rotation)
        return float(np.linalg.norm(delta.as_rotvec()))


@dataclass(frozen=True)
class FlowField:
    """Forward optical flow ``(H, W, 2)`` in pixels/frame; NaN marks invalid."""

    shape: GridShape
    vectors: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.shape != (self.shape.height, self.shape.width, 2):
            raise ShapeMismatch(f"flow has shape {vectors.shape}, expected {(self.shape.height, self.shape.width, 2)}")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def from_array(cls, vectors: np.ndarray) -> "FlowField":
        """Wrap an ``(H, W, 2)`` array."""
        array = np.asarray(vectors)
        if array.ndim != 3:
            raise ShapeMismatch(f"flow must be H x W x 2, got {array.shape}")
        return cls(GridShape(array.shape[0], array.shape[1]), array)

    @property
    def valid(self) -> np.ndarray:
        """``(H, W)`` mask of finite vectors."""
        return np.all(np.isfinite(self.vectors), axis=-1)


@dataclass(frozen=True)
class DisparityField:
    """Disparity ``(H, W)`` in pixels; NaN or non-positive entries are invalid."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.shape.height, self.shape.width):
            raise ShapeMismatch(f"disparity has shape {values.shape}, expected {(self.shape.height, self.shape.width)}")
        with np.errstate(invalid="ignore"):
            bad = np.isfinite(values) & (values <= 0)
        if np.any(bad):
            logger.warning("%d non-positive disparities treated as invalid", int(bad.sum()))
            values = np.where(bad, np.nan, values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "DisparityField":
        """Wrap an ``(H, W)`` array."""
        array = np.asarray(values)
        if array.ndim != 2:
            raise ShapeMismatch(f"disparity must be H x W, got {array.shape}")
        return cls(GridShape(*array.shape), array)

    @property
    def valid(self) -> np.ndarray:
        """``(H, W)`` mask of usable disparities."""
        return np.isfinite(self.values)


@dataclass(frozen=True)
class MotionNoiseModel:
    """Flow measurement noise and disparity noise, both in pixels."""

    sigma_flow: float = 1.0
    sigma_d: float = 0.5

    def __post_init__(self) -> None:
        _positive("sigma_flow", self.sigma_flow)
        _positive("sigma_d", self.sigma_d)


@dataclass(frozen=True)
class RansacParams:
    """RANSAC schedule: hypothesis count, inlier threshold in pixels and seed."""

    iterations: int = 500
    threshold: float = 3.0
    seed: int = 0
    min_inlier_ratio: float = MIN_INLIER_RATIO

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise InvalidParameter(f"ransac iterations must be >= 1, got {self.iterations}")
        _positive("ransac threshold", self.threshold)
        if not 0.0 < self.min_inlier_ratio <= 1.0:
            raise InvalidParameter(f"min inlier ratio must lie in (0, 1], got {self.min_inlier_ratio}")


# Point geometry


def lift_to_3d(u: float, v: float, disparity: float, rig: CameraRig) -> np.ndarray:
    """Back-project pixel ``(u, v)`` with disparity ``d`` to a camera-frame point."""
    if not (math.isfinite(disparity) and disparity > 0):
        raise NonPositiveDisparity(f"disparity must be positive, got {disparity}")
    return lift_points(np.array([u]), np.array([v]), rig.depth(np.array([disparity])), rig)[0]


def lift_points(us: np.ndarray, vs: np.ndarray, depths: np.ndarray, rig: CameraRig) -> np.ndarray:
    """Back-project pixels with known depth to ``(N, 3)`` points."""
    z = np.asarray(depths, dtype=np.float64)
    x = (np.asarray(us, dtype=np.float64) - rig.cx) * z / rig.fx
    y = (np.asarray(vs, dtype=np.float64) - rig.cy) * z / rig.fy
    return np.stack([x, y, z], axis=-1)


def project_points(points: np.ndarray, rig: CameraRig) -> Tuple[np.ndarray, np.ndarray]:
    """Project points; return ``(u, v)`` with NaN where ``z <= 0``."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(z > 0, z, np.nan)
        u = rig.fx * points[..., 0] / safe + rig.cx
        v = rig.fy * points[..., 1] / safe + rig.cy
    return u, v


def flow_of_points(
    us: np.ndarray, vs: np.ndarray, depths: np.ndarray, motion: RigidMotion, rig: CameraRig
) -> np.ndarray:
    """Predicted flow ``(N, 2)`` of static points; NaN rows land behind the camera."""
    moved = motion.apply(lift_points(us, vs, depths, rig))
    u2, v2 = project_points(moved, rig)
    return np.stack([u2 - us, v2 - vs], axis=-1)


def predicted_flow(u: float, v: float, z: float, motion: RigidMotion, rig: CameraRig) -> Tuple[float, float]:
    """Return the flow a static point at pixel ``(u, v)`` and depth ``z`` would show.

    Raises:
        NonPositiveDepth: When ``z <= 0``.
        BehindCamera: When the transformed point has ``z' <= 0``.
    """
    if not (math.isfinite(z) and z > 0):
        raise NonPositiveDepth(f"depth must be positive, got {z}")
    flow = flow_of_points(np.array([float(u)]), np.array([float(v)]), np.array([z]), motion, rig)[0]
    if not np.all(np.isfinite(flow)):
        raise BehindCamera(f"pixel ({u}, {v}) at depth {z} moves behind the camera")
    return float(flow[0]), float(flow[1])


def fit_rigid_motion(source: np.ndarray, target: np.ndarray) -> RigidMotion:
    """Fit the least-squares rigid alignment ``target ~ R source + T`` (Kabsch).

    Args:
        source: ``(K, 3)`` points at time t.
        target: ``(K, 3)`` corresponding points at time t+1.

    Returns:
        The rigid motion minimizing the summed squared residuals.

    Raises:
        DegenerateConfiguration: Fewer than three points or collinear points.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ShapeMismatch(f"point sets must both be K x 3, got {source.shape} and {target.shape}")
    if source.shape[0] < 3:
        raise DegenerateConfiguration(f"need at least 3 correspondences, got {source.shape[0]}")
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    centered = source - source_mean
    spread = np.linalg.svd(centered, compute_uv=False)
    if spread[0] == 0.0 or spread[1] <= 1e-9 * spread[0]:
        raise DegenerateConfiguration("correspondences are collinear")
    rotation, _ = Rotation.align_vectors(target - target_mean, centered)
    matrix = rotation.as_matrix()
    return RigidMotion(matrix, target_mean - matrix @ source_mean)


def sample_bilinear(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Look up ``grid`` bilinearly at ``(x=col, y=row)``.

    Returns:
        ``(values, ok)``; ``ok`` is False outside the image or when a corner
        with non-zero weight is not finite.
    """
    height, width = grid.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = np.isfinite(x) & np.isfinite(y) & (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    ax = xs - x0
    ay = ys - y0
    values = np.zeros_like(xs)
    ok = inside.copy()
    for dy, dx, weight in (
        (0, 0, (1 - ax) * (1 - ay)),
        (0, 1, ax * (1 - ay)),
        (1, 0, (1 - ax) * ay),
        (1, 1, ax * ay),
    ):
        corner = grid[np.minimum(y0 + dy, height - 1), np.minimum(x0 + dx, width - 1)]
        usable = np.isfinite(corner)
        ok &= usable | (weight == 0.0)
        values += np.where(usable, corner, 0.0) * weight
    return values, ok


# Ego-motion


def _flow_residuals(params: np.ndarray, us, vs, depths, measured, rig: CameraRig, scale: float) -> np.ndarray:
    motion = Rotation.from_rotvec(params[:3]).as_matrix()
    points = lift_points(us, vs, depths, rig) @ motion.T + params[3:]
    z = np.maximum(points[:, 2], 1e-6)
    u2 = rig.fx * points[:, 0] / z + rig.cx
    v2 = rig.fy * points[:, 1] / z + rig.cy
    return (np.concatenate([u2 - us - measured[:, 0], v2 - vs - measured[:, 1]])) / scale


def _refine(initial: RigidMotion, us, vs, depths, measured, rig: CameraRig, noise: MotionNoiseModel) -> RigidMotion:
    start = np.concatenate([initial.rotvec, initial.translation])
    fit = least_squares(
        _flow_residuals,
        start,
        args=(us, vs, depths, measured, rig, noise.sigma_flow),
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=200,
    )
    return RigidMotion.from_rotvec(fit.x[:3], fit.x[3:])


def _inliers(motion: RigidMotion, us, vs, depths, measured, rig: CameraRig, threshold: float) -> np.ndarray:
    residual = flow_of_points(us, vs, depths, motion, rig) - measured
    with np.errstate(invalid="ignore"):
        return np.linalg.norm(residual, axis=1) < threshold


def ransac_ego_motion(
    flow: FlowField,
    disparity: DisparityField,
    rig: CameraRig,
    noise: MotionNoiseModel,
    params: RansacParams,
    next_disparity: Optional[DisparityField] = None,
) -> Tuple[RigidMotion, np.ndarray]:
    """Estimate the camera motion between two frames.

    Minimal three-point hypotheses are fitted in 3D. Second-frame points
    lift the flow-displaced pixel with ``next_disparity`` sampled
    bilinearly; without it the source depth is reused. Hypotheses are
    scored by the count of pixels whose predicted flow is within
    ``params.threshold`` of the measured flow, and the winner is refined by
    minimizing the flow reprojection error over its inliers.

    Args:
        flow: Measured flow from frame t to t+1.
        disparity: Disparity at frame t.
        rig: Stereo rig.
        noise: Noise model; scales the reprojection residuals.
        params: RANSAC schedule.
        next_disparity: Disparity at frame t+1, optional.

    Returns:
        The motion and an ``(H, W)`` inlier mask.

    Raises:
        InsufficientData: Fewer than three pixels with flow and disparity.
        NoConsensus: Best inlier ratio below ``params.min_inlier_ratio``.
    """
    if flow.shape != disparity.shape:
        raise ShapeMismatch("flow and disparity must share a grid")
    valid = flow.valid & disparity.valid
    index = np.flatnonzero(valid)
    if index.size < 3:
        raise InsufficientData(f"only {index.size} pixels have both flow and disparity")
    rows, cols = np.divmod(index, flow.shape.width)
    us = cols.astype(np.float64)
    vs = rows.astype(np.float64)
    depths = rig.depth(disparity.values.reshape(-1)[index])
    measured = flow.vectors.reshape(-1, 2)[index]
    source = lift_points(us, vs, depths, rig)

    target_u = us + measured[:, 0]
    target_v = vs + measured[:, 1]
    target_depth = depths
    paired = np.ones(index.size, dtype=bool)
    if next_disparity is not None:
        if next_disparity.shape != flow.shape:
            raise ShapeMismatch("next-frame disparity must share the flow grid")
        sampled, paired = sample_bilinear(next_disparity.values, target_u, target_v)
        target_depth = np.where(paired, rig.fx * rig.baseline / np.where(paired, sampled, 1.0), depths)
    target = lift_points(target_u, target_v, target_depth, rig)
    candidates = np.flatnonzero(paired)
    if candidates.size < 3:
        raise InsufficientData("fewer than three pixels have a second-frame correspondence")

    rng = np.random.default_rng(params.seed)
    best_count = -1
    best_motion: Optional[RigidMotion] = None
    for _ in range(params.iterations):
        sample = rng.choice(candidates, size=3, replace=False)
        try:
            hypothesis = fit_rigid_motion(source[sample], target[sample])
        except DegenerateConfiguration:
            continue
        count = int(np.count_nonzero(_inliers(hypothesis, us, vs, depths, measured, rig, params.threshold)))
        if count > best_count:
            best_count, best_motion = count, hypothesis

    ratio = best_count / index.size
    if best_motion is None or ratio < params.min_inlier_ratio:
        raise NoConsensus(f"best hypothesis explains {max(ratio, 0.0):.1%} of pixels")

    motion = best_motion
    inliers = _inliers(motion, us, vs, depths, measured, rig, params.threshold)
    for _ in range(2):
        motion = _refine(motion, us[inliers], vs[inliers], depths[inliers], measured[inliers], rig, noise)
        refreshed = _inliers(motion, us, vs, depths, measured, rig, params.threshold)
        if np.array_equal(refreshed, inliers) or np.count_nonzero(refreshed) < 3:
            break
        inliers = refreshed
    logger.info(
        "ego-motion: %d/%d inliers (%.1f%%), |T| = %.4f m, rotation %.4f deg",
        int(inliers.sum()),
        index.size,
        100.0 * inliers.mean(),
        float(np.linalg.norm(motion.translation)),
        math.degrees(float(np.linalg.norm(motion.rotvec))),
    )
    mask = np.zeros(flow.shape.size, dtype=bool)
    mask[index[inliers]] = True
    return motion, mask.reshape(flow.shape.height, flow.shape.width)


# Motion unary


def motion_unary_single(flow_meas: np.ndarray, flow_pred: np.ndarray, covariance: np.ndarray) -> float:
    """Return the Mahalanobis form ``r^T S^-1 r`` of the flow residual ``r = pred - meas``."""
    sigma = np.asarray(covariance, dtype=np.float64)
    if sigma.shape != (2, 2) or not np.all(np.isfinite(sigma)):
        raise SingularCovariance("covariance must be a finite 2x2 matrix")
    if abs(sigma[0, 1] - sigma[1, 0]) > 1e-12 * max(1.0, float(np.abs(sigma).max())):
        raise SingularCovariance("covariance must be symmetric")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance must be positive definite") from None
    residual = np.asarray(flow_pred, dtype=np.float64) - np.asarray(flow_meas, dtype=np.float64)
    return float(residual @ np.linalg.solve(sigma, residual))


def depth_jacobian(
    us: np.ndarray, vs: np.ndarray, depths: np.ndarray, motion: RigidMotion, rig: CameraRig
) -> np.ndarray:
    """Central-difference ``d(predicted flow)/dz`` with step ``1e-3 z``, shape ``(N, 2)``."""
    step = 1e-3 * depths
    ahead = flow_of_points(us, vs, depths + step, motion, rig)
    behind = flow_of_points(us, vs, depths - step, motion, rig)
    return (ahead - behind) / (2.0 * step)[:, None]


def build_covariance(
    u: float, v: float, z: float, motion: RigidMotion, rig: CameraRig, noise: MotionNoiseModel
) -> np.ndarray:
    """Return ``S = sigma_flow^2 I + J sigma_z^2 J^T`` for one pixel.

    ``sigma_z = (fx * baseline / d^2) * sigma_d`` is the depth noise
    propagated from disparity noise.
    """
    if not (math.isfinite(z) and z > 0):
        raise NonPositiveDepth(f"depth must be positive, got {z}")
    return covariance_field(np.array([float(u)]), np.array([float(v)]), np.array([z]), motion, rig, noise)[0]


def covariance_field(
    us: np.ndarray, vs: np.ndarray, depths: np.ndarray, motion: RigidMotion, rig: CameraRig, noise: MotionNoiseModel
) -> np.ndarray:
    """Vectorized :func:`build_covariance`, shape ``(N, 2, 2)``."""
    disparity = rig.disparity(depths)
    sigma_z = rig.fx * rig.baseline / disparity**2 * noise.sigma_d
    jac = depth_jacobian(us, vs, depths, motion, rig)
    cov = (sigma_z**2)[:, None, None] * jac[:, :, None] * jac[:, None, :]
    cov[:, 0, 0] += noise.sigma_flow**2
    cov[:, 1, 1] += noise.sigma_flow**2
    return cov


def pair_cost_field(
    flow: FlowField, disparity: DisparityField, motion: RigidMotion, rig: CameraRig, noise: MotionNoiseModel
) -> np.ndarray:
    """Return the Mahalanobis stationary cost of every pixel for one frame pair, NaN where unusable."""
    if flow.shape != disparity.shape:
        raise ShapeMismatch("flow and disparity must share a grid")
    shape = flow.shape
    costs = np.full(shape.size, np.nan)
    index = np.flatnonzero(flow.valid & disparity.valid)
    if index.size == 0:
        return costs.reshape(shape.height, shape.width)
    rows, cols = np.divmod(index, shape.width)
    us, vs = cols.astype(np.float64), rows.astype(np.float64)
    depths = rig.depth(disparity.values.reshape(-1)[index])
    residual = flow_of_points(us, vs, depths, motion, rig) - flow.vectors.reshape(-1, 2)[index]
    cov = covariance_field(us, vs, depths, motion, rig, noise)
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    with np.errstate(invalid="ignore"):
        quad = (c * residual[:, 0] ** 2 - 2 * b * residual[:, 0] * residual[:, 1] + a * residual[:, 1] ** 2) / det
    costs[index] = quad
    return costs.reshape(shape.height, shape.width)


@dataclass(frozen=True)
class FrameBundle:
    """Three frames around the labelled frame 0: flows, disparities and ego-motions."""

    flow_01: FlowField
    flow_12: FlowField
    disparity_0: DisparityField
    disparity_1: DisparityField
    disparity_2: Optional[DisparityField]
    motion_01: RigidMotion
    motion_12: RigidMotion

    def __post_init__(self) -> None:
        shapes = {self.flow_01.shape, self.flow_12.shape, self.disparity_0.shape, self.disparity_1.shape}
        if self.disparity_2 is not None:
            shapes.add(self.disparity_2.shape)
        if len(shapes) != 1:
            raise ShapeMismatch("all frames must share a grid")

    @property
    def shape(self) -> GridShape:
        """Shared grid."""
        return self.flow_01.shape


def motion_unary_field(
    frames: FrameBundle, rig: CameraRig, noise: MotionNoiseModel, tau_move: float = DEFAULT_TAU_MOVE
) -> UnaryField:
    """Two-label motion costs for frame 0 with three-frame consistency.

    The pair 0->1 is evaluated at each pixel, the pair 1->2 at the pixel's
    forward warp rounded to the nearest pixel. The second pair is dropped
    when the warp leaves the image, lands on invalid data, or is occluded
    (frame-1 depth more than 10% in front of the ego-transported point).
    The stationary cost is the mean of the available pair costs and the
    moving cost is ``tau_move``. Pixels with no usable pair get equal zero
    costs.
    """
    _positive("tau_move", tau_move)
    shape = frames.shape
    first = pair_cost_field(frames.flow_01, frames.disparity_0, frames.motion_01, rig, noise).reshape(-1)
    second_grid = pair_cost_field(frames.flow_12, frames.disparity_1, frames.motion_12, rig, noise)

    rows, cols = np.divmod(np.arange(shape.size), shape.width)
    flow = frames.flow_01.vectors.reshape(-1, 2)
    with np.errstate(invalid="ignore"):
        warped_col = np.rint(cols + flow[:, 0])
        warped_row = np.rint(rows + flow[:, 1])
    inside = (
        np.isfinite(warped_col)
        & np.isfinite(warped_row)
        & (warped_col >= 0)
        & (warped_col < shape.width)
        & (warped_row >= 0)
        & (warped_row < shape.height)
    )
    second = np.full(shape.size, np.nan)
    target_row = warped_row[inside].astype(np.int64)
    target_col = warped_col[inside].astype(np.int64)
    second[inside] = second_grid[target_row, target_col]

    # occluded in frame 1: something at the warped pixel is well in front of the transported point
    source = np.flatnonzero(inside & frames.disparity_0.valid.reshape(-1))
    if source.size:
        src_rows, src_cols = np.divmod(source, shape.width)
        depth_0 = rig.depth(frames.disparity_0.values.reshape(-1)[source])
        transported = frames.motion_01.apply(lift_points(src_cols, src_rows, depth_0, rig))[:, 2]
        seen = frames.disparity_1.values[
            np.rint(src_rows + flow[source, 1]).astype(np.int64), np.rint(src_cols + flow[source, 0]).astype(np.int64)
        ]
        with np.errstate(invalid="ignore"):
            occluded = rig.depth(seen) < (1.0 - OCCLUSION_MARGIN) * transported
        if np.any(occluded):
            logger.info("%d pixels are occluded in frame 1; second pair dropped", int(occluded.sum()))
            second[source[occluded]] = np.nan

    stacked = np.stack([first, second], axis=1)
    available = np.isfinite(stacked)
    counts = available.sum(axis=1)
    totals = np.where(available, stacked, 0.0).sum(axis=1)
    distance = np.divide(totals, counts, out=np.zeros(shape.size), where=counts > 0)

    costs = np.zeros((shape.size, 2))
    informative = counts > 0
    costs[informative, 0] = distance[informative]
    costs[informative, 1] = tau_move
    single = int(np.count_nonzero(counts == 1))
    empty = int(np.count_nonzero(~informative))
    if single:
        logger.info("%d pixels use a single frame pair", single)
    if empty:
        logger.warning("%d pixels have no usable frame pair and stay uninformative", empty)
    return UnaryField(shape, MOTION_LABELS, costs)


def geometric_motion_labels(unary: UnaryField) -> np.ndarray:
    """Return the per-pixel argmin of the motion unary, ties to ``stationary``."""
    return np.argmin(unary.costs, axis=1).astype(np.uint8).reshape(unary.shape.height, unary.shape.width)
