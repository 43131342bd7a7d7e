"""CRF potentials: Potts kernels, joint unary, correlation matrix and energies.

Sign convention for the class-motion correlation: ``lambda(l, m) = -1`` is
maximally compatible (lowest cost), ``+1`` maximally incompatible. Its
strength in the joint unary is ``w_corr``.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple

import numpy as np

from .errors import (
    DataError,
    InvalidParameter,
    NonPositiveBandwidth,
    SamePixel,
    ShapeMismatch,
    SizeGuardExceeded,
)
from .filtering import FeatureMap, KernelComponent, KernelSpec, build_features, stack_features
from .grid import MOTION_LABELS, GridShape, LabelField, LabelSpace, PathLike, UnaryField

logger = logging.getLogger(__name__)

EnergyMode = Literal["dense-exact", "neighborhood"]

ENERGY_MAX_PIXELS = 4096


@dataclass(frozen=True)
class KernelParams:
    """Bandwidths and Potts weights of the object and motion kernels."""

    theta_beta: float = 3.0
    theta_v: float = 10.0
    theta_p: float = 1.0
    theta_f: float = 1.0
    w_app: float = 1.0
    w_smooth: float = 1.0
    w_flow: float = 1.0

    def __post_init__(self) -> None:
        for name in ("theta_beta", "theta_v", "theta_p", "theta_f"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise NonPositiveBandwidth(f"{name} must be positive, got {value}")
        for name in ("w_app", "w_smooth", "w_flow"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidParameter(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class CorrelationMatrix:
    """Class-motion compatibility ``lambda`` with coupling weight ``w_corr``."""

    object_labels: LabelSpace
    values: np.ndarray
    w_corr: float = 1.0
    motion_labels: LabelSpace = MOTION_LABELS

    def __post_init__(self) -> None:
        table = np.array(self.values, dtype=np.float64)
        if table.shape != (self.object_labels.count, self.motion_labels.count):
            raise ShapeMismatch(
                f"correlation matrix has shape {table.shape}, expected "
                f"({self.object_labels.count}, {self.motion_labels.count})"
            )
        if not np.all(np.isfinite(table)) or np.any(np.abs(table) > 1.0 + 1e-12):
            raise DataError("correlation entries must lie in [-1, 1]")
        if not (math.isfinite(self.w_corr) and self.w_corr >= 0):
            raise InvalidParameter(f"w_corr must be finite and >= 0, got {self.w_corr}")
        table = np.clip(table, -1.0, 1.0)
        table.setflags(write=False)
        object.__setattr__(self, "values", table)

    @classmethod
    def zeros(cls, object_labels: LabelSpace, w_corr: float = 0.0) -> "CorrelationMatrix":
        """Return a matrix with no class-motion coupling."""
        return cls(object_labels, np.zeros((object_labels.count, MOTION_LABELS.count)), w_corr)

    def with_weight(self, w_corr: float) -> "CorrelationMatrix":
        """Return a copy with a different coupling weight."""
        return CorrelationMatrix(self.object_labels, self.values, w_corr, self.motion_labels)

    @property
    def coupling(self) -> np.ndarray:
        """``w_corr * lambda`` as an ``(n, 2)`` cost table."""
        return self.w_corr * self.values

    @property
    def is_decoupled(self) -> bool:
        """True when the cross term is identically zero."""
        return self.w_corr == 0.0 or not np.any(self.values)


def write_correlation_csv(path: PathLike, matrix: CorrelationMatrix) -> None:
    """Write ``lambda`` as CSV: header of motion labels, one row per object label."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["object", *matrix.motion_labels.names])
        for name, row in zip(matrix.object_labels.names, matrix.values):
            writer.writerow([name, *(repr(float(v)) for v in row)])


def read_correlation_csv(
    path: PathLike, object_labels: Optional[LabelSpace] = None, w_corr: float = 1.0
) -> CorrelationMatrix:
    """Read a correlation CSV, reordering rows to ``object_labels`` when given."""
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [row for row in csv.reader(handle) if row]
    if not rows:
        raise DataError(f"{path}: empty correlation file")
    header, body = rows[0], rows[1:]
    if tuple(h.strip() for h in header[1:]) != MOTION_LABELS.names:
        raise DataError(f"{path}: header must list motion labels {MOTION_LABELS.names}")
    try:
        table = {row[0].strip(): [float(v) for v in row[1:]] for row in body}
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    labels = object_labels or LabelSpace(tuple(table))
    missing = [name for name in labels.names if name not in table]
    if missing:
        raise DataError(f"{path}: no row for object labels {missing}")
    return CorrelationMatrix(labels, np.array([table[name] for name in labels.names]), w_corr)


# Pairwise kernels


def _pixel_pair(i: int, j: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    if i == j:
        raise SamePixel(f"pairwise term requested for pixel {i} with itself")
    return (
        np.array([i % width, i // width], dtype=np.float64),
        np.array([j % width, j // width], dtype=np.float64),
    )


def _color(image: np.ndarray, index: int) -> np.ndarray:
    pixels = np.asarray(image, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    value = pixels.reshape(-1, pixels.shape[-1])[index]
    return np.repeat(value, 3) if value.size == 1 else value


def object_pairwise_kernel(i: int, j: int, image: np.ndarray, params: KernelParams) -> float:
    """Return the appearance plus smoothness Potts weight ``p(i, j)``.

    Grayscale images are treated as three equal channels, the same way the
    bilateral feature map replicates them.
    """
    width = np.shape(image)[1]
    p_i, p_j = _pixel_pair(i, j, width)
    d_pos = float(np.sum((p_i - p_j) ** 2))
    d_int = float(np.sum((_color(image, i) - _color(image, j)) ** 2))
    appearance = math.exp(-d_pos / (2 * params.theta_beta**2) - d_int / (2 * params.theta_v**2))
    smoothness = math.exp(-d_pos / (2 * params.theta_p**2))
    return params.w_app * appearance + params.w_smooth * smoothness


def flow_bilateral_kernel(i: int, j: int, flow: np.ndarray, params: KernelParams) -> float:
    """Return the dense motion Potts weight ``g(i, j)``."""
    width = np.shape(flow)[1]
    p_i, p_j = _pixel_pair(i, j, width)
    vectors = np.asarray(flow, dtype=np.float64).reshape(-1, 2)
    d_pos = float(np.sum((p_i - p_j) ** 2))
    d_flow = float(np.sum((vectors[i] - vectors[j]) ** 2))
    return params.w_flow * math.exp(-d_pos / (2 * params.theta_p**2) - d_flow / (2 * params.theta_f**2))


def motion_pairwise_literal(i: int, j: int, flow: np.ndarray) -> float:
    """Return ``|f(i) - f(j)|``, the neighbourhood-graph motion edge weight."""
    if i == j:
        raise SamePixel(f"pairwise term requested for pixel {i} with itself")
    vectors = np.asarray(flow, dtype=np.float64).reshape(-1, 2)
    return float(np.linalg.norm(vectors[i] - vectors[j]))


# Joint model


def joint_unary(
    object_unary: UnaryField, motion_unary: UnaryField, correlation: CorrelationMatrix
) -> np.ndarray:
    """Return ``psi_J[i, l, m] = psi_O[i, l] + psi_M[i, m] + w_corr * lambda(l, m)``."""
    if object_unary.shape != motion_unary.shape:
        raise ShapeMismatch("object and motion unaries must share a grid")
    if motion_unary.labels != MOTION_LABELS:
        raise ShapeMismatch(f"motion unary must use labels {MOTION_LABELS.names}")
    if correlation.object_labels.count != object_unary.labels.count:
        raise ShapeMismatch("correlation rows must match the object label count")
    return (
        object_unary.costs[:, :, None]
        + motion_unary.costs[:, None, :]
        + correlation.coupling[None, :, :]
    )


@dataclass(frozen=True)
class JointModel:
    """Everything mean-field inference needs for one frame."""

    object_unary: UnaryField
    motion_unary: UnaryField
    params: KernelParams
    correlation: CorrelationMatrix
    object_features: FeatureMap
    object_kernel: KernelSpec
    motion_features: FeatureMap
    motion_kernel: KernelSpec
    flow: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self) -> None:
        shapes = {
            self.object_unary.shape,
            self.motion_unary.shape,
            self.object_features.shape,
            self.motion_features.shape,
        }
        if len(shapes) != 1:
            raise ShapeMismatch("all model fields must share a grid")
        if self.motion_unary.labels != MOTION_LABELS:
            raise ShapeMismatch(f"motion unary must use labels {MOTION_LABELS.names}")
        if self.correlation.object_labels.count != self.object_unary.labels.count:
            raise ShapeMismatch("correlation rows must match the object label count")
        self.object_kernel.check(self.object_features.dim)
        self.motion_kernel.check(self.motion_features.dim)

    @property
    def shape(self) -> GridShape:
        """Shared grid."""
        return self.object_unary.shape

    def with_correlation(self, correlation: CorrelationMatrix) -> "JointModel":
        """Return a copy with a different correlation matrix."""
        return JointModel(
            self.object_unary,
            self.motion_unary,
            self.params,
            correlation,
            self.object_features,
            self.object_kernel,
            self.motion_features,
            self.motion_kernel,
            self.flow,
        )


def build_joint_model(
    object_unary: UnaryField,
    motion_unary: UnaryField,
    image: np.ndarray,
    flow: np.ndarray,
    params: KernelParams,
    correlation: Optional[CorrelationMatrix] = None,
) -> JointModel:
    """Assemble feature maps and kernels for a frame.

    Args:
        object_unary: ``n``-label object costs.
        motion_unary: Two-label motion costs.
        image: ``(H, W)`` or ``(H, W, 3)`` intensities for the appearance kernel.
        flow: ``(H, W, 2)`` forward flow; non-finite vectors are treated as zero.
        params: Bandwidths and weights.
        correlation: Class-motion coupling; ``None`` means no coupling.

    Returns:
        The joint model.
    """
    shape = object_unary.shape
    vectors = np.asarray(flow, dtype=np.float64)
    invalid = ~np.all(np.isfinite(vectors), axis=-1) if vectors.size else None
    if invalid is not None and np.any(invalid):
        logger.warning("%d pixels without flow use a zero vector in the motion kernel", int(invalid.sum()))
        vectors = np.where(invalid[..., None], 0.0, vectors)
    bilateral = build_features(
        "bilateral-intensity", shape, theta_spatial=params.theta_beta, theta_range=params.theta_v, image=image
    )
    spatial = build_features("spatial", shape, theta_spatial=params.theta_p)
    object_features, (app_start, smooth_start) = stack_features([bilateral, spatial])
    object_kernel = KernelSpec(
        (
            KernelComponent(app_start, app_start + bilateral.dim, params.w_app),
            KernelComponent(smooth_start, smooth_start + spatial.dim, params.w_smooth),
        )
    )
    motion_features = build_features(
        "flow-bilateral", shape, theta_spatial=params.theta_p, theta_range=params.theta_f, flow=vectors
    )
    motion_kernel = KernelSpec.single(motion_features.dim, params.w_flow)
    if correlation is None:
        correlation = CorrelationMatrix.zeros(object_unary.labels)
    return JointModel(
        object_unary,
        motion_unary,
        params,
        correlation,
        object_features,
        object_kernel,
        motion_features,
        motion_kernel,
        vectors.reshape(-1, 2),
    )


# Energies


def kernel_matrix(features: FeatureMap, kernel: KernelSpec) -> np.ndarray:
    """Return the dense ``K[i, j] = k(f_i, f_j)`` with a zero diagonal."""
    n = features.shape.size
    if n > ENERGY_MAX_PIXELS:
        raise SizeGuardExceeded(f"dense kernel matrices are limited to {ENERGY_MAX_PIXELS} pixels")
    matrix = np.zeros((n, n))
    for component in kernel.components:
        block = features.features[:, component.start : component.stop]
        d2 = np.sum((block[:, None, :] - block[None, :, :]) ** 2, axis=-1)
        matrix += component.weight * np.exp(-0.5 * d2)
    np.fill_diagonal(matrix, 0.0)
    return matrix


def neighbor_pairs(shape: GridShape, connectivity: int = 4) -> np.ndarray:
    """Return ``(E, 2)`` unordered neighbour pairs ``i < j`` of the pixel grid."""
    if connectivity not in (4, 8):
        raise InvalidParameter(f"connectivity must be 4 or 8, got {connectivity}")
    offsets = [(0, 1), (1, 0)] + ([(1, 1), (1, -1)] if connectivity == 8 else [])
    rows, cols = np.mgrid[0 : shape.height, 0 : shape.width]
    pairs = []
    for dr, dc in offsets:
        r2, c2 = rows + dr, cols + dc
        inside = (r2 >= 0) & (r2 < shape.height) & (c2 >= 0) & (c2 < shape.width)
        first = rows[inside] * shape.width + cols[inside]
        second = r2[inside] * shape.width + c2[inside]
        pairs.append(np.stack([np.minimum(first, second), np.maximum(first, second)], axis=1))
    return np.concatenate(pairs)


def pairwise_matrices(
    model: JointModel, mode: EnergyMode = "dense-exact", connectivity: int = 4
) -> Tuple[np.ndarray, np.ndarray]:
    """Return upper-triangular object and motion pair weights ``(P, G)``.

    Dense-exact mode uses the Gaussian kernels of the model; neighbourhood
    mode keeps only grid neighbours, with the object kernel for ``P`` and
    the literal flow difference for ``G``.
    """
    shape = model.shape
    if shape.size > ENERGY_MAX_PIXELS:
        raise SizeGuardExceeded(f"exact energies are limited to {ENERGY_MAX_PIXELS} pixels")
    if mode == "dense-exact":
        p = np.triu(kernel_matrix(model.object_features, model.object_kernel), k=1)
        g = np.triu(kernel_matrix(model.motion_features, model.motion_kernel), k=1)
        return p, g
    if mode != "neighborhood":
        raise InvalidParameter(f"unknown energy mode {mode!r}")
    if model.flow.shape != (shape.size, 2):
        raise ShapeMismatch(f"neighborhood energies need ({shape.size}, 2) flow vectors, model has {model.flow.shape}")
    dense = kernel_matrix(model.object_features, model.object_kernel)
    pairs = neighbor_pairs(shape, connectivity)
    p = np.zeros((shape.size, shape.size))
    g = np.zeros((shape.size, shape.size))
    rows, cols = pairs[:, 0], pairs[:, 1]
    p[rows, cols] = dense[rows, cols]
    g[rows, cols] = np.linalg.norm(model.flow[rows] - model.flow[cols], axis=1)
    return p, g


def layer_energy(labels: np.ndarray, costs: np.ndarray, pairs: np.ndarray) -> float:
    """Return the single-layer Potts energy ``sum_i c_i(x_i) + sum_{i<j} [x_i != x_j] P_ij``."""
    flat = np.asarray(labels).reshape(-1).astype(np.int64)
    unary = float(np.sum(costs[np.arange(flat.size), flat]))
    differs = flat[:, None] != flat[None, :]
    return unary + float(np.sum(np.triu(pairs, k=1) * differs))


def joint_energy(
    z_object: LabelField,
    z_motion: LabelField,
    model: JointModel,
    mode: EnergyMode = "dense-exact",
    connectivity: int = 4,
) -> float:
    """Evaluate the joint energy with each unordered pair counted once.

    Args:
        z_object: Object labelling.
        z_motion: Motion labelling.
        model: Joint model; at most 4096 pixels.
        mode: ``dense-exact`` (Gaussian kernels) or ``neighborhood``.
        connectivity: 4 or 8, for neighbourhood mode.

    Returns:
        The energy value.
    """
    if z_object.shape != model.shape or z_motion.shape != model.shape:
        raise ShapeMismatch("labellings must match the model grid")
    if not (np.all(z_object.valid) and np.all(z_motion.valid)):
        raise DataError("energy is undefined for ignore-labelled pixels")
    p, g = pairwise_matrices(model, mode, connectivity)
    x = z_object.assignment.reshape(-1).astype(np.int64)
    y = z_motion.assignment.reshape(-1).astype(np.int64)
    table = joint_unary(model.object_unary, model.motion_unary, model.correlation)
    unary = float(np.sum(table[np.arange(x.size), x, y]))
    pairwise = float(np.sum(p * (x[:, None] != x[None, :])) + np.sum(g * (y[:, None] != y[None, :])))
    return unary + pairwise
