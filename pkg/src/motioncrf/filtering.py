"""High-dimensional Gaussian filtering for dense pairwise messages.

Every kernel component is ``w * exp(-|f_i - f_j|^2 / 2)`` over a slice of
features that are already divided by their bandwidths, and every filter
excludes the ``j == i`` term. Two paths are provided: an exact O(N^2) oracle
with a fixed ascending-``j`` accumulation order, and a fast path that drops
pairs whose kernel value is below ``accuracy * w``.

The fast path uses the pixel grid whenever a component's slice holds the
pixel coordinates. A purely spatial component is separable and runs as two
1-D correlations over the image. A component that adds intensity or flow to
the coordinates is summed over each pixel's spatial cutoff disc. Feature
maps without pixel coordinates fall back to a k-d tree pair list.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple

import numba
import numpy as np
from scipy import ndimage, sparse
from scipy.spatial import cKDTree

from .errors import (
    InvalidParameter,
    NonFiniteValue,
    NonPositiveBandwidth,
    ShapeMismatch,
    SizeGuardExceeded,
    UnsupportedFeatureDim,
)
from .grid import GridShape

logger = logging.getLogger(__name__)

FeatureMode = Literal["spatial", "bilateral-intensity", "flow-bilateral"]

BRUTE_FORCE_MAX_PIXELS = 16384
FAST_MAX_FEATURE_DIM = 16
DEFAULT_ACCURACY = 1e-4
NEGATIVE_CLAMP = -1e-6


@dataclass(frozen=True)
class PixelAxes:
    """Feature dims ``x`` and ``y`` holding ``col / theta`` and ``row / theta``."""

    x: int
    y: int
    theta: float

    def shifted(self, offset: int) -> "PixelAxes":
        """Return the same axes after ``offset`` leading dims were prepended."""
        return PixelAxes(self.x + offset, self.y + offset, self.theta)


@dataclass(frozen=True)
class FeatureMap:
    """Per-pixel feature vectors, shape ``(N, dim)``, pre-scaled by bandwidths.

    ``pixel_axes`` marks the dims that hold scaled pixel coordinates; the
    fast filter uses them to walk the image grid instead of a pair list.
    """

    shape: GridShape
    features: np.ndarray
    pixel_axes: Tuple[PixelAxes, ...] = ()

    def __post_init__(self) -> None:
        table = np.array(self.features, dtype=np.float64)
        if table.ndim == 1:
            table = table[:, None]
        if table.ndim != 2 or table.shape[0] != self.shape.size or table.shape[1] < 1:
            raise ShapeMismatch(f"feature map has shape {table.shape} for {self.shape.size} pixels")
        if not np.all(np.isfinite(table)):
            raise NonFiniteValue("features must be finite")
        if self.pixel_axes:
            cols, rows = _pixel_coordinates(self.shape)
            for axes in self.pixel_axes:
                if max(axes.x, axes.y) >= table.shape[1]:
                    raise ShapeMismatch(f"pixel axes ({axes.x}, {axes.y}) exceed feature dim {table.shape[1]}")
                if not (
                    np.allclose(table[:, axes.x], cols / axes.theta) and np.allclose(table[:, axes.y], rows / axes.theta)
                ):
                    raise ShapeMismatch(f"feature dims ({axes.x}, {axes.y}) are not pixel coordinates / {axes.theta}")
        table.setflags(write=False)
        object.__setattr__(self, "features", table)
        object.__setattr__(self, "pixel_axes", tuple(self.pixel_axes))

    @property
    def dim(self) -> int:
        """Feature dimension."""
        return int(self.features.shape[1])


@dataclass(frozen=True)
class KernelComponent:
    """One Gaussian term over features ``[start, stop)`` with weight ``weight``."""

    start: int
    stop: int
    weight: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.weight) or self.weight < 0:
            raise InvalidParameter(f"kernel weight must be finite and >= 0, got {self.weight}")
        if self.start < 0 or self.stop <= self.start:
            raise InvalidParameter(f"invalid feature slice [{self.start}, {self.stop})")


@dataclass(frozen=True)
class KernelSpec:
    """Sum of Gaussian kernel components."""

    components: Tuple[KernelComponent, ...]

    def check(self, dim: int) -> None:
        """Raise when a component slice falls outside ``[0, dim)``."""
        for component in self.components:
            if component.stop > dim:
                raise ShapeMismatch(
                    f"kernel slice [{component.start}, {component.stop}) exceeds feature dim {dim}"
                )

    @property
    def self_weight(self) -> float:
        """Kernel value at zero distance, ``k(f_i, f_i)``."""
        return float(sum(component.weight for component in self.components))

    @classmethod
    def single(cls, dim: int, weight: float = 1.0) -> "KernelSpec":
        """Return a kernel with one component over all ``dim`` features."""
        return cls((KernelComponent(0, dim, weight),))


def _as_channels(values: np.ndarray, features: FeatureMap) -> np.ndarray:
    table = np.asarray(values, dtype=np.float64)
    if table.ndim == 1:
        table = table[:, None]
    if table.ndim == 3:
        table = table.reshape(-1, table.shape[-1])
    if table.ndim != 2 or table.shape[0] != features.shape.size:
        raise ShapeMismatch(
            f"values with shape {np.shape(values)} do not match {features.shape.size} pixels"
        )
    return np.ascontiguousarray(table)


@numba.njit(parallel=True, cache=True)
def _exact_sum(values, features, starts, stops, weights):  # pragma: no cover - compiled
    n, channels = values.shape
    out = np.zeros((n, channels))
    for i in numba.prange(n):
        for j in range(n):
            if j == i:
                continue
            k = 0.0
            for c in range(starts.shape[0]):
                d2 = 0.0
                for f in range(starts[c], stops[c]):
                    diff = features[i, f] - features[j, f]
                    d2 += diff * diff
                k += weights[c] * np.exp(-0.5 * d2)
            for ch in range(channels):
                out[i, ch] += k * values[j, ch]
    return out


def brute_force_filter(values: np.ndarray, features: FeatureMap, kernel: KernelSpec) -> np.ndarray:
    """Evaluate ``out[i] = sum_{j != i} k(f_i, f_j) * values[j]`` exactly.

    Args:
        values: ``(N, C)`` per-pixel channels.
        features: Feature map with ``N`` pixels.
        kernel: Kernel components over the feature slices.

    Returns:
        ``(N, C)`` filtered channels.

    Raises:
        ShapeMismatch: When values and features disagree.
        SizeGuardExceeded: When ``N`` exceeds 16384 pixels.
    """
    table = _as_channels(values, features)
    kernel.check(features.dim)
    if features.shape.size > BRUTE_FORCE_MAX_PIXELS:
        raise SizeGuardExceeded(
            f"brute-force filtering is limited to {BRUTE_FORCE_MAX_PIXELS} pixels, got {features.shape.size}"
        )
    starts = np.array([c.start for c in kernel.components], dtype=np.int64)
    stops = np.array([c.stop for c in kernel.components], dtype=np.int64)
    weights = np.array([c.weight for c in kernel.components], dtype=np.float64)
    return _exact_sum(table, np.ascontiguousarray(features.features), starts, stops, weights)


def cutoff_radius(accuracy: float) -> float:
    """Return the feature-space radius beyond which ``exp(-d^2 / 2) < accuracy``."""
    if not 0.0 < accuracy < 1.0:
        raise InvalidParameter(f"filter accuracy must lie in (0, 1), got {accuracy}")
    return math.sqrt(-2.0 * math.log(accuracy))


@numba.njit(parallel=True, cache=True)
def _disc_sum(values, height, width, ranges, theta, limit):  # pragma: no cover - compiled
    n, channels = values.shape
    dims = ranges.shape[1]
    inv_theta2 = 1.0 / (theta * theta)
    reach = int(math.floor(math.sqrt(limit) * theta))
    out = np.zeros((n, channels))
    for i in numba.prange(n):
        row = i // width
        col = i - row * width
        for r in range(max(0, row - reach), min(height - 1, row + reach) + 1):
            dy2 = (r - row) * (r - row) * inv_theta2
            if dy2 > limit:
                continue
            span = int(math.floor(math.sqrt((limit - dy2) / inv_theta2)))
            for c in range(max(0, col - span), min(width - 1, col + span) + 1):
                j = r * width + c
                if j == i:
                    continue
                d2 = dy2 + (c - col) * (c - col) * inv_theta2
                for f in range(dims):
                    diff = ranges[i, f] - ranges[j, f]
                    d2 += diff * diff
                if d2 > limit:
                    continue
                k = math.exp(-0.5 * d2)
                for ch in range(channels):
                    out[i, ch] += k * values[j, ch]
    return out


def _pixel_axes_of(features: FeatureMap, component: KernelComponent) -> Optional[PixelAxes]:
    for axes in features.pixel_axes:
        if component.start <= min(axes.x, axes.y) and max(axes.x, axes.y) < component.stop:
            return axes
    return None


class _SeparablePlan:
    """Spatial-only component: two exact 1-D correlations over the image."""

    method = "separable"

    def __init__(self, shape: GridShape, theta: float, weight: float, radius: float):
        self.shape = shape
        self.weight = weight
        reach = math.floor(radius * theta)
        self.taps = []
        for size in (shape.height, shape.width):
            offsets = np.arange(-min(reach, size - 1), min(reach, size - 1) + 1, dtype=np.float64)
            self.taps.append(np.exp(-0.5 * (offsets / theta) ** 2))

    def apply(self, table: np.ndarray) -> np.ndarray:
        grid = table.reshape(self.shape.height, self.shape.width, -1)
        out = ndimage.correlate1d(grid, self.taps[0], axis=0, mode="constant", cval=0.0)
        out = ndimage.correlate1d(out, self.taps[1], axis=1, mode="constant", cval=0.0)
        # the centre tap is exp(0) = 1
        return self.weight * (out - grid).reshape(table.shape)


class _DiscPlan:
    """Coordinates plus range dims: a gather over each pixel's cutoff disc."""

    method = "disc"

    def __init__(self, features: FeatureMap, component: KernelComponent, axes: PixelAxes, radius: float):
        self.shape = features.shape
        self.weight = component.weight
        self.theta = axes.theta
        self.limit = radius * radius
        keep = [d for d in range(component.start, component.stop) if d not in (axes.x, axes.y)]
        self.ranges = np.ascontiguousarray(features.features[:, keep])

    def apply(self, table: np.ndarray) -> np.ndarray:
        out = _disc_sum(table, self.shape.height, self.shape.width, self.ranges, self.theta, self.limit)
        return self.weight * out


class _PairPlan:
    """Arbitrary features: every pair ``i < j`` within the cutoff, stored sparsely."""

    method = "pairs"

    def __init__(self, features: FeatureMap, component: KernelComponent, radius: float):
        n = features.shape.size
        block = np.ascontiguousarray(features.features[:, component.start : component.stop])
        pairs = cKDTree(block).query_pairs(radius, output_type="ndarray")
        if pairs.size:
            rows, cols = pairs[:, 0], pairs[:, 1]
            d2 = np.sum((block[rows] - block[cols]) ** 2, axis=1)
            weights = component.weight * np.exp(-0.5 * d2)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            weights = np.zeros(0)
        self.upper = sparse.csr_matrix((weights, (rows, cols)), shape=(n, n))
        self.lower = self.upper.transpose().tocsr()

    def apply(self, table: np.ndarray) -> np.ndarray:
        return np.asarray(self.upper @ table + self.lower @ table)


class GaussianOperator:
    """Truncated Gaussian filter prepared for repeated application.

    Each kernel component gets its own plan. Components over pixel
    coordinates cost time proportional to the pixel count times the cutoff
    reach (separable) or the cutoff disc area (disc), with memory linear in
    the pixel count.
    """

    def __init__(self, features: FeatureMap, kernel: KernelSpec, accuracy: float = DEFAULT_ACCURACY):
        if features.dim > FAST_MAX_FEATURE_DIM:
            raise UnsupportedFeatureDim(
                f"fast filtering supports at most {FAST_MAX_FEATURE_DIM} feature dims, got {features.dim}"
            )
        kernel.check(features.dim)
        self.shape = features.shape
        self.radius = cutoff_radius(accuracy)
        self._plans = []
        for component in kernel.components:
            if component.weight == 0.0:
                continue
            axes = _pixel_axes_of(features, component)
            if axes is None:
                plan = _PairPlan(features, component, self.radius)
            elif component.stop - component.start == 2:
                plan = _SeparablePlan(features.shape, axes.theta, component.weight, self.radius)
            else:
                plan = _DiscPlan(features, component, axes, self.radius)
            self._plans.append(plan)
        logger.debug("gaussian operator: %d pixels, plans %s", self.shape.size, self.methods)

    @property
    def methods(self) -> Tuple[str, ...]:
        """Filtering method chosen for each non-zero kernel component."""
        return tuple(plan.method for plan in self._plans)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Filter ``(N, C)`` values with the truncated kernel."""
        table = np.ascontiguousarray(values, dtype=np.float64)
        squeeze = table.ndim == 1
        if squeeze:
            table = table[:, None]
        if table.ndim != 2 or table.shape[0] != self.shape.size:
            raise ShapeMismatch(f"values have shape {np.shape(values)}, operator has {self.shape.size} pixels")
        out = np.zeros_like(table)
        for plan in self._plans:
            out += plan.apply(table)
        out[(out < 0.0) & (out >= NEGATIVE_CLAMP)] = 0.0
        return out[:, 0] if squeeze else out


def fast_filter(
    values: np.ndarray,
    features: FeatureMap,
    kernel: KernelSpec,
    accuracy: float = DEFAULT_ACCURACY,
) -> np.ndarray:
    """Approximate :func:`brute_force_filter` by a cutoff-radius kernel sum.

    Args:
        values: ``(N, C)`` per-pixel channels.
        features: Feature map with ``N`` pixels and at most 16 dims.
        kernel: Kernel components over the feature slices.
        accuracy: Relative kernel value below which pairs are dropped.

    Returns:
        ``(N, C)`` filtered channels.
    """
    table = _as_channels(values, features)
    return GaussianOperator(features, kernel, accuracy).apply(table)


def _pixel_coordinates(shape: GridShape) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0 : shape.height, 0 : shape.width]
    return cols.reshape(-1).astype(np.float64), rows.reshape(-1).astype(np.float64)


def _positive(name: str, value: Optional[float]) -> float:
    if value is None or not value > 0 or not math.isfinite(value):
        raise NonPositiveBandwidth(f"bandwidth {name} must be positive, got {value}")
    return float(value)


def build_features(
    mode: FeatureMode,
    shape: GridShape,
    *,
    theta_spatial: float,
    theta_range: Optional[float] = None,
    image: Optional[np.ndarray] = None,
    flow: Optional[np.ndarray] = None,
) -> FeatureMap:
    """Construct bandwidth-scaled features for one kernel.

    Args:
        mode: ``spatial`` gives ``(x, y) / theta_spatial``;
            ``bilateral-intensity`` appends ``(r, g, b) / theta_range``;
            ``flow-bilateral`` appends ``(u, v) / theta_range``.
        shape: Image grid.
        theta_spatial: Spatial bandwidth in pixels.
        theta_range: Intensity or flow bandwidth.
        image: ``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)`` intensities.
        flow: ``(H, W, 2)`` flow vectors.

    Returns:
        The feature map.
    """
    theta_spatial = _positive("theta_spatial", theta_spatial)
    x, y = _pixel_coordinates(shape)
    spatial = np.stack([x / theta_spatial, y / theta_spatial], axis=1)
    axes = (PixelAxes(0, 1, theta_spatial),)
    if mode == "spatial":
        return FeatureMap(shape, spatial, axes)

    theta_range = _positive("theta_range", theta_range)
    if mode == "bilateral-intensity":
        if image is None:
            raise InvalidParameter("bilateral-intensity features need an image")
        pixels = np.asarray(image, dtype=np.float64)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.shape[:2] != (shape.height, shape.width) or pixels.shape[2] not in (1, 3):
            raise ShapeMismatch(f"image of shape {pixels.shape} does not match {shape}")
        if pixels.shape[2] == 1:
            pixels = np.repeat(pixels, 3, axis=2)
        return FeatureMap(shape, np.hstack([spatial, pixels.reshape(-1, 3) / theta_range]), axes)

    if mode == "flow-bilateral":
        if flow is None:
            raise InvalidParameter("flow-bilateral features need a flow field")
        vectors = np.asarray(flow, dtype=np.float64)
        if vectors.shape != (shape.height, shape.width, 2):
            raise ShapeMismatch(f"flow of shape {vectors.shape} does not match {shape}")
        return FeatureMap(shape, np.hstack([spatial, vectors.reshape(-1, 2) / theta_range]), axes)

    raise InvalidParameter(f"unknown feature mode {mode!r}")


def stack_features(maps: Sequence[FeatureMap]) -> Tuple[FeatureMap, Tuple[int, ...]]:
    """Concatenate feature maps and return the start offset of each."""
    if not maps:
        raise InvalidParameter("no feature maps to stack")
    shape = maps[0].shape
    offsets = []
    axes = []
    position = 0
    for feature_map in maps:
        if feature_map.shape != shape:
            raise ShapeMismatch("stacked feature maps must share a grid")
        offsets.append(position)
        axes.extend(a.shifted(position) for a in feature_map.pixel_axes)
        position += feature_map.dim
    return FeatureMap(shape, np.hstack([m.features for m in maps]), tuple(axes)), tuple(offsets)
